/** Minimal deterministic SVG builder: fixed canvas, no timestamps. */

export const WIDTH = 720;
export const HEIGHT = 440;
export const MARGIN = { top: 28, right: 20, bottom: 40, left: 64 };

export interface Scale {
  (v: number): number;
}

export function linearScale(
  domain: [number, number],
  range: [number, number],
): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 === 0 ? 1 : d1 - d0;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!Number.isFinite(lo)) return [0, 1];
  if (lo === hi) return [lo - 0.5, hi + 0.5];
  return [lo, hi];
}

const PALETTE = [
  "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
  "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0",
];

export function color(i: number): string {
  return PALETTE[i % PALETTE.length];
}

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

export class Svg {
  private parts: string[] = [];

  polyline(
    points: Array<[number, number]>,
    stroke: string,
    opts: { width?: number; dash?: string; opacity?: number } = {},
  ): void {
    const pts = points
      .map(([x, y]) => `${x.toFixed(2)},${y.toFixed(2)}`)
      .join(" ");
    const dash = opts.dash ? ` stroke-dasharray="${opts.dash}"` : "";
    const opacity = opts.opacity !== undefined ? ` stroke-opacity="${opts.opacity}"` : "";
    this.parts.push(
      `<polyline points="${pts}" fill="none" stroke="${stroke}" ` +
        `stroke-width="${opts.width ?? 1.5}"${dash}${opacity}/>`,
    );
  }

  circle(x: number, y: number, r: number, fill: string): void {
    this.parts.push(
      `<circle cx="${x.toFixed(2)}" cy="${y.toFixed(2)}" r="${r}" fill="${fill}"/>`,
    );
  }

  text(
    x: number,
    y: number,
    content: string,
    opts: { size?: number; anchor?: string; fill?: string } = {},
  ): void {
    this.parts.push(
      `<text x="${x.toFixed(2)}" y="${y.toFixed(2)}" ` +
        `font-family="sans-serif" font-size="${opts.size ?? 12}" ` +
        `text-anchor="${opts.anchor ?? "start"}" ` +
        `fill="${opts.fill ?? "#222"}">${esc(content)}</text>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string): void {
    this.parts.push(
      `<line x1="${x1.toFixed(2)}" y1="${y1.toFixed(2)}" ` +
        `x2="${x2.toFixed(2)}" y2="${y2.toFixed(2)}" stroke="${stroke}"/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string): void {
    this.parts.push(
      `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${w.toFixed(2)}" ` +
        `height="${h.toFixed(2)}" fill="${fill}"/>`,
    );
  }

  /** Standard axes box with min/max tick labels. */
  axes(
    xDomain: [number, number],
    yDomain: [number, number],
    xLabel: string,
    yLabel: string,
  ): { x: Scale; y: Scale } {
    const x = linearScale(xDomain, [MARGIN.left, WIDTH - MARGIN.right]);
    const y = linearScale(yDomain, [HEIGHT - MARGIN.bottom, MARGIN.top]);
    this.line(MARGIN.left, MARGIN.top, MARGIN.left, HEIGHT - MARGIN.bottom, "#444");
    this.line(
      MARGIN.left,
      HEIGHT - MARGIN.bottom,
      WIDTH - MARGIN.right,
      HEIGHT - MARGIN.bottom,
      "#444",
    );
    this.text(MARGIN.left, HEIGHT - 8, String(xDomain[0]), { size: 10 });
    this.text(WIDTH - MARGIN.right, HEIGHT - 8, String(xDomain[1]), {
      size: 10,
      anchor: "end",
    });
    this.text(MARGIN.left - 6, HEIGHT - MARGIN.bottom, yDomain[0].toPrecision(3), {
      size: 10,
      anchor: "end",
    });
    this.text(MARGIN.left - 6, MARGIN.top + 4, yDomain[1].toPrecision(3), {
      size: 10,
      anchor: "end",
    });
    this.text((MARGIN.left + WIDTH - MARGIN.right) / 2, HEIGHT - 8, xLabel, {
      size: 11,
      anchor: "middle",
    });
    this.text(12, MARGIN.top - 10, yLabel, { size: 11 });
    return { x, y };
  }

  render(title: string): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" ` +
      `height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">\n` +
      `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>\n` +
      `<text x="${WIDTH / 2}" y="18" font-family="sans-serif" font-size="14" ` +
      `text-anchor="middle" fill="#111">${esc(title)}</text>\n` +
      this.parts.join("\n") +
      "\n</svg>\n"
    );
  }
}
