/**
 * Reader for the harness run CSVs (schema v1).
 *
 * The files are plain comma-separated tables with a header row; values are
 * either arm/stage strings, integers, or floats printed with repr().  Input
 * files are never modified.
 */

export type Row = Record<string, string | number>;

const NUMERIC_PREFIXES = [
  "seed", "failed", "final_loss", "best_val", "rel_l2", "residual_rmse",
  "grad_r_rmse", "aux_weight", "wall_bc_rmse", "dtdn_wall_rmse", "t_wall_rmse",
  "bc_residual_rmse", "shell_probe", "shell_weight", "runtime_s",
];

export class SchemaError extends Error {}

export function parseCsv(text: string): Row[] {
  const lines = text.split(/\r?\n/).filter((line) => line.trim().length > 0);
  if (lines.length === 0) {
    throw new SchemaError("empty CSV: no header row");
  }
  const header = lines[0].split(",").map((h) => h.trim());
  const rows: Row[] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new SchemaError(
        `row has ${cells.length} cells but header has ${header.length}: ${line}`,
      );
    }
    const row: Row = {};
    header.forEach((name, i) => {
      const raw = cells[i].trim();
      row[name] = NUMERIC_PREFIXES.some((p) => name.startsWith(p))
        ? Number(raw)
        : raw;
    });
    rows.push(row);
  }
  return rows;
}

export function requireColumns(rows: Row[], columns: string[]): void {
  if (rows.length === 0) {
    throw new SchemaError("CSV contains no data rows");
  }
  const present = new Set(Object.keys(rows[0]));
  const missing = columns.filter((c) => !present.has(c));
  if (missing.length > 0) {
    throw new SchemaError(`missing required columns: ${missing.join(", ")}`);
  }
}

/** Group completed (non-failed) rows by arm, preserving sorted arm order. */
export function byArm(rows: Row[]): Map<string, Row[]> {
  const groups = new Map<string, Row[]>();
  const completed = rows.filter((r) => Number(r.failed ?? 0) === 0);
  const arms = [...new Set(completed.map((r) => String(r.arm)))].sort();
  for (const arm of arms) {
    groups.set(arm, completed.filter((r) => String(r.arm) === arm));
  }
  return groups;
}

export function mean(values: number[]): number {
  if (values.length === 0) {
    throw new SchemaError("cannot average an empty column");
  }
  return values.reduce((a, b) => a + b, 0) / values.length;
}

export function armMean(groups: Map<string, Row[]>, column: string): Map<string, number> {
  const out = new Map<string, number>();
  for (const [arm, rows] of groups) {
    out.set(arm, mean(rows.map((r) => Number(r[column]))));
  }
  return out;
}
