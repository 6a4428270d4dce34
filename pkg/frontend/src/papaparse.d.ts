// minimal declarations for the subset of papaparse used here; replace with
// @types/papaparse when installing from a full registry
declare module "papaparse" {
  export interface ParseError {
    row: number | undefined;
    message: string;
  }
  export interface ParseResult<T> {
    data: T[];
    errors: ParseError[];
  }
  export interface ParseConfig {
    header?: boolean;
    skipEmptyLines?: boolean;
  }
  function parse<T>(input: string, config?: ParseConfig): ParseResult<T>;
  const Papa: { parse: typeof parse };
  export default Papa;
}
