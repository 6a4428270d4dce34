import { writeFileSync } from "node:fs";
import { forecastColumns, num, readCsv, requireColumns, Row } from "./csv.js";
import { color, extent, Svg } from "./svg.js";

export const KINDS = ["paths", "trajectories", "cost-fan", "metrics-table"] as const;
export type Kind = (typeof KINDS)[number];

export interface FigureSpec {
  kind: Kind;
  inputs: string[];
  out: string;
}

function groupBy(rows: Row[], key: string): Map<string, Row[]> {
  const groups = new Map<string, Row[]>();
  for (const row of rows) {
    const id = row[key];
    const bucket = groups.get(id);
    if (bucket) bucket.push(row);
    else groups.set(id, [row]);
  }
  return groups;
}

/** Gallery of sampled capacity curves, one polyline per path id. */
export function renderPaths(input: string): string {
  const rows = readCsv(input);
  requireColumns(rows, ["path_id", "week", "storage_limit"], input);
  const groups = groupBy(rows, "path_id");
  const weeks = rows.map((r) => num(r, "week"));
  const limits = rows.map((r) => num(r, "storage_limit"));
  const svg = new Svg();
  const { x, y } = svg.axes(extent(weeks), extent(limits), "week", "storage limit");
  let i = 0;
  for (const [id, group] of groups) {
    group.sort((a, b) => num(a, "week") - num(b, "week"));
    svg.polyline(
      group.map((r) => [x(num(r, "week")), y(num(r, "storage_limit"))]),
      color(i),
    );
    svg.text(x(num(group[group.length - 1], "week")) - 4,
      y(num(group[group.length - 1], "storage_limit")) - 4,
      `path ${id}`, { size: 10, fill: color(i), anchor: "end" });
    i += 1;
  }
  return svg.render(`Sampled capacity paths (${groups.size})`);
}

/** Aggregate usage against its limit over the run horizon. */
export function renderTrajectories(input: string): string {
  const rows = readCsv(input);
  requireColumns(rows, ["week", "agg_storage", "storage_limit"], input);
  rows.sort((a, b) => num(a, "week") - num(b, "week"));
  const weeks = rows.map((r) => num(r, "week"));
  const usage = rows.map((r) => num(r, "agg_storage"));
  const limit = rows.map((r) => num(r, "storage_limit"));
  const svg = new Svg();
  const { x, y } = svg.axes(
    extent(weeks),
    extent([...usage, ...limit]),
    "week",
    "aggregate storage",
  );
  svg.polyline(weeks.map((w, i) => [x(w), y(limit[i])]), "#9498a0", {
    dash: "6 3",
    width: 2,
  });
  svg.polyline(weeks.map((w, i) => [x(w), y(usage[i])]), color(0), { width: 2 });
  svg.text(x(weeks[weeks.length - 1]) - 4, y(limit[limit.length - 1]) - 6, "limit", {
    size: 10, fill: "#9498a0", anchor: "end",
  });
  svg.text(x(weeks[weeks.length - 1]) - 4, y(usage[usage.length - 1]) + 12, "usage", {
    size: 10, fill: color(0), anchor: "end",
  });
  return svg.render("Aggregate storage vs capacity limit");
}

export interface FanPoint {
  announcedAt: number;
  target: number;
  value: number;
}

/**
 * For every target week, collect the announced price and each earlier
 * forecast of that week (column lambda_storage_l{s} on row target - s).
 */
export function fanPoints(rows: Row[]): FanPoint[] {
  const horizonCols = forecastColumns(rows, "lambda_storage");
  const byWeek = new Map(rows.map((r) => [num(r, "week"), r]));
  const points: FanPoint[] = [];
  for (const row of rows) {
    const target = num(row, "week");
    points.push({ announcedAt: target, target, value: num(row, "lambda_storage") });
    horizonCols.forEach((colName, idx) => {
      const s = idx + 1;
      const source = byWeek.get(target - s);
      if (source) {
        points.push({ announcedAt: target - s, target, value: num(source, colName) });
      }
    });
  }
  return points;
}

/** Fan chart: per target week, forecasts of that week as the horizon shrinks. */
export function renderCostFan(input: string): string {
  const rows = readCsv(input);
  requireColumns(rows, ["week", "lambda_storage", "lambda_storage_l1"], input);
  rows.sort((a, b) => num(a, "week") - num(b, "week"));
  const points = fanPoints(rows);
  const byTarget = new Map<number, FanPoint[]>();
  for (const p of points) {
    const bucket = byTarget.get(p.target);
    if (bucket) bucket.push(p);
    else byTarget.set(p.target, [p]);
  }
  const svg = new Svg();
  const { x, y } = svg.axes(
    extent(points.map((p) => p.announcedAt)),
    extent(points.map((p) => p.value)),
    "announcement week",
    "storage price",
  );
  let i = 0;
  for (const [, fan] of byTarget) {
    fan.sort((a, b) => a.announcedAt - b.announcedAt);
    svg.polyline(
      fan.map((p) => [x(p.announcedAt), y(p.value)]),
      color(i),
      { opacity: 0.8 },
    );
    const last = fan[fan.length - 1];
    svg.circle(x(last.announcedAt), y(last.value), 2.5, color(i));
    i += 1;
  }
  return svg.render("Storage price forecasts per target week");
}

const METRIC_COLUMNS = ["M1", "M2", "M3", "M4", "reward", "rescaled_reward"];

function fmt(value: string): string {
  if (value === "") return "-";
  const v = Number(value);
  if (!Number.isFinite(v)) return value;
  return Math.abs(v) >= 1000 ? v.toFixed(0) : v.toPrecision(4);
}

/** Evaluation table rendered as a figure, one row per backtest row. */
export function renderMetricsTable(input: string): string {
  const rows = readCsv(input);
  requireColumns(rows, ["policy", "coordinator", "path_id", ...METRIC_COLUMNS], input);
  const header = ["policy", "coordinator", "path", ...METRIC_COLUMNS];
  const svg = new Svg();
  const x0 = 20;
  const colWidth = (680 - x0) / header.length;
  const rowHeight = 22;
  header.forEach((h, j) => {
    svg.text(x0 + j * colWidth, 48, h, { size: 11, fill: "#111" });
  });
  svg.line(x0, 54, x0 + header.length * colWidth, 54, "#444");
  rows.forEach((row, i) => {
    const yPos = 54 + (i + 1) * rowHeight;
    if (i % 2 === 1) {
      svg.rect(x0, yPos - 14, header.length * colWidth, rowHeight - 4, "#f2f2f2");
    }
    const cells = [
      row["policy"], row["coordinator"], row["path_id"],
      ...METRIC_COLUMNS.map((c) => fmt(row[c])),
    ];
    cells.forEach((cell, j) => {
      svg.text(x0 + j * colWidth, yPos, cell, { size: 10 });
    });
  });
  return svg.render("Backtest metrics");
}

/** Render the figure described by spec; throws before writing on bad input. */
export function render(spec: FigureSpec): void {
  if (!KINDS.includes(spec.kind)) {
    throw new Error(`unknown figure kind: ${spec.kind}`);
  }
  if (spec.inputs.length === 0) {
    throw new Error("at least one input CSV is required");
  }
  const input = spec.inputs[0];
  let payload: string;
  switch (spec.kind) {
    case "paths":
      payload = renderPaths(input);
      break;
    case "trajectories":
      payload = renderTrajectories(input);
      break;
    case "cost-fan":
      payload = renderCostFan(input);
      break;
    case "metrics-table":
      payload = renderMetricsTable(input);
      break;
  }
  writeFileSync(spec.out, payload);
}
