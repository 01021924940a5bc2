/**
 * Node bindings for the scfp imputation pipeline.
 *
 * The heavy lifting happens in the scfp CLI; this package marshals in-memory
 * matrices through the CLI's file formats (headered CSV in, CSV out, key-value
 * reports) so callers never touch the filesystem themselves. Matrices are
 * plain number[][] rows-of-cells; inputs are never mutated.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export type PipelineMode =
  | "full"
  | "hard_only"
  | "soft_only"
  | "hard_soft_no_refine"
  | "soft_then_hard"
  | "full_diffusion_baseline";

export interface PipelineOptions {
  /** Neighbors per cell in the kNN graph. */
  k?: number;
  /** Soft-clamping weight in (0, 1). */
  alpha?: number;
  /** Hard-propagation iteration budget. */
  itersHard?: number;
  /** Soft-propagation iteration budget. */
  itersSoft?: number;
  /** Early-stop residual; 0 disables early stopping. */
  tolerance?: number;
  /** Pipeline variant. */
  mode?: PipelineMode;
  /** Seed for every random choice downstream. */
  seed?: number;
  /** Cap the CLI's internal BLAS threads. */
  threads?: number;
  /** Library-size normalize before the pipeline. */
  normalize?: boolean;
  /** log(1+v) transform before the pipeline. */
  log1p?: boolean;
  /** Override the scfp executable ($SCFP_BIN, then "scfp"). */
  cli?: string[];
}

export interface EvaluateDropoutOptions extends PipelineOptions {
  /** Test hook: score the uncorrupted input instead of imputing. */
  oracleImpute?: boolean;
}

export interface DropoutEvaluation {
  rmse: number;
  report: Record<string, string>;
}

export const DEFAULTS = {
  k: 15,
  alpha: 0.99,
  itersHard: 40,
  itersSoft: 40,
  tolerance: 0,
  mode: "full" as PipelineMode,
  seed: 0,
};

/** Input failed the same validity rules the pipeline core enforces. */
export class ScfpValidationError extends Error {
  constructor(
    message: string,
    readonly row = -1,
    readonly col = -1,
  ) {
    super(row >= 0 ? `${message} at (${row},${col})` : message);
    this.name = "ScfpValidationError";
  }
}

/** The scfp CLI exited nonzero; carries its exit code and stderr. */
export class ScfpCliError extends Error {
  constructor(
    readonly exitCode: number,
    readonly stderr: string,
    command: string,
  ) {
    super(`${command} exited with code ${exitCode}: ${stderr.trim()}`);
    this.name = "ScfpCliError";
  }
}

export function validateMatrix(matrix: readonly (readonly number[])[]): void {
  if (!Array.isArray(matrix) || matrix.length === 0) {
    throw new ScfpValidationError("matrix must have at least one row");
  }
  const width = matrix[0].length;
  if (width === 0) {
    throw new ScfpValidationError("matrix must have at least one column");
  }
  matrix.forEach((row, i) => {
    if (!Array.isArray(row) || row.length !== width) {
      throw new ScfpValidationError(
        `row ${i} has ${row.length} entries, expected ${width}`,
      );
    }
    row.forEach((value, j) => {
      if (typeof value !== "number" || !Number.isFinite(value)) {
        throw new ScfpValidationError("non-finite entry", i, j);
      }
      if (value < 0) {
        throw new ScfpValidationError("negative entry", i, j);
      }
    });
  });
}

/** Serialize to the headered CSV layout the CLI reads (cells as rows). */
export function matrixToCsv(matrix: readonly (readonly number[])[]): string {
  const width = matrix[0].length;
  const header = ["cell_id", ...Array.from({ length: width }, (_, j) => `gene_${j}`)];
  const lines = [header.join(",")];
  matrix.forEach((row, i) => {
    // String(number) is the shortest float64-exact form, so values
    // round-trip bit for bit through the file
    lines.push([`cell_${i}`, ...row.map((v) => String(v))].join(","));
  });
  return lines.join("\n") + "\n";
}

export function csvToMatrix(text: string): number[][] {
  const lines = text.split("\n").filter((line) => line.length > 0);
  return lines.slice(1).map((line) => line.split(",").slice(1).map(Number));
}

export function parseReport(text: string): Record<string, string> {
  const entries: Record<string, string> = {};
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const split = line.indexOf(":");
    if (split < 0) continue;
    entries[line.slice(0, split).trim()] = line.slice(split + 1).trim();
  }
  return entries;
}

function cliCommand(options: PipelineOptions): string[] {
  if (options.cli && options.cli.length > 0) return [...options.cli];
  const env = process.env.SCFP_BIN;
  if (env && env.length > 0) return env.split(" ");
  return ["scfp"];
}

function pipelineFlags(options: PipelineOptions): string[] {
  const flags = [
    "--k", String(options.k ?? DEFAULTS.k),
    "--alpha", String(options.alpha ?? DEFAULTS.alpha),
    "--iters-hard", String(options.itersHard ?? DEFAULTS.itersHard),
    "--iters-soft", String(options.itersSoft ?? DEFAULTS.itersSoft),
    "--tolerance", String(options.tolerance ?? DEFAULTS.tolerance),
    "--mode", options.mode ?? DEFAULTS.mode,
    "--seed", String(options.seed ?? DEFAULTS.seed),
  ];
  if (options.threads !== undefined) flags.push("--threads", String(options.threads));
  if (options.normalize !== undefined) {
    flags.push(options.normalize ? "--normalize" : "--no-normalize");
  }
  if (options.log1p !== undefined) {
    flags.push(options.log1p ? "--log1p" : "--no-log1p");
  }
  return flags;
}

function runCli(args: string[], options: PipelineOptions): void {
  const [command, ...prefix] = cliCommand(options);
  const result = spawnSync(command, [...prefix, ...args], {
    encoding: "utf-8",
    maxBuffer: 1 << 28,
  });
  if (result.error) {
    throw new ScfpCliError(-1, String(result.error), command);
  }
  if (result.status !== 0) {
    throw new ScfpCliError(result.status ?? -1, result.stderr ?? "", command);
  }
}

function withWorkdir<T>(body: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "scfp-node-"));
  try {
    return body(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/**
 * Denoise a nonnegative cell-gene matrix and return the denoised matrix.
 *
 * Numerics are identical to `scfp impute` with the same flags, because this
 * is `scfp impute` on a temp file. The input array is left untouched.
 */
export function impute(
  matrix: readonly (readonly number[])[],
  options: PipelineOptions = {},
): number[][] {
  validateMatrix(matrix);
  return withWorkdir((dir) => {
    const inputPath = join(dir, "input.csv");
    const outputPath = join(dir, "output.csv");
    writeFileSync(inputPath, matrixToCsv(matrix));
    runCli(
      [
        "impute",
        "--input", inputPath,
        "--output", outputPath,
        "--output-format", "csv",
        ...pipelineFlags(options),
      ],
      options,
    );
    return csvToMatrix(readFileSync(outputPath, "utf-8"));
  });
}

/**
 * Corrupt `rate` of the nonzeros (seeded), impute, and score masked RMSE.
 *
 * Returns the RMSE plus the full key-value report the CLI emitted.
 */
export function evaluateDropout(
  matrix: readonly (readonly number[])[],
  rate: number,
  seed: number,
  options: EvaluateDropoutOptions = {},
): DropoutEvaluation {
  validateMatrix(matrix);
  return withWorkdir((dir) => {
    const inputPath = join(dir, "input.csv");
    const reportPath = join(dir, "report.txt");
    writeFileSync(inputPath, matrixToCsv(matrix));
    const args = [
      "evaluate",
      "--input", inputPath,
      "--dropout", String(rate),
      "--report", reportPath,
      ...pipelineFlags({ ...options, seed }),
    ];
    if (options.oracleImpute) args.push("--oracle-impute");
    runCli(args, options);
    const report = parseReport(readFileSync(reportPath, "utf-8"));
    const rmse = Number(report["dropout.rmse_masked"]);
    if (!Number.isFinite(rmse)) {
      throw new ScfpCliError(-1, "report is missing dropout.rmse_masked", "scfp");
    }
    return { rmse, report };
  });
}
