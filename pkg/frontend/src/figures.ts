import type { EChartsOption, SeriesOption } from "echarts";
import { column, readReport, readTable, requireColumns, SchemaError, Table } from "./csv.js";

export const FIGURE_KINDS = [
  "diffusion-growth",
  "ids-staircase",
  "rotation-curve",
  "lyapunov-curve",
  "slope-compare",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  inputs: string[];
  output: string;
  width: number;
  height: number;
  title?: string;
}

function baseOption(title: string, xName: string, yName: string): EChartsOption {
  return {
    animation: false,
    backgroundColor: "#ffffff",
    title: { text: title, left: "center", textStyle: { fontSize: 14 } },
    grid: { left: 60, right: 24, top: 48, bottom: 48 },
    legend: { bottom: 0, icon: "rect" },
    xAxis: { type: "value", name: xName, nameLocation: "middle", nameGap: 26 },
    yAxis: { type: "value", name: yName, nameLocation: "middle", nameGap: 42 },
  };
}

function line(
  name: string,
  xs: number[],
  ys: number[],
  opts: Partial<SeriesOption> = {}
): SeriesOption {
  return {
    type: "line",
    name,
    showSymbol: false,
    data: xs.map((x, i) => [x, ys[i]]),
    ...opts,
  } as SeriesOption;
}

function splitInputs(inputs: string[]): { csvs: string[]; jsons: string[] } {
  return {
    csvs: inputs.filter((p) => p.endsWith(".csv")),
    jsons: inputs.filter((p) => p.endsWith(".json")),
  };
}

/** Diffusion growth: the measured ||q(t)||_D curve, the ballistic upper
 *  bound ||q(0)||_D + 2 ||q(0)||_2 t, and the predicted-slope line C*t. */
function diffusionGrowth(spec: FigureSpec): EChartsOption {
  const { csvs, jsons } = splitInputs(spec.inputs);
  if (csvs.length !== 1) {
    throw new SchemaError("diffusion-growth needs exactly one evolution CSV");
  }
  const table = readTable(csvs[0]);
  requireColumns(table, ["t", "l2", "diffusion"]);
  const t = column(table, "t");
  const d = column(table, "diffusion");
  const bound = t.map((x, i) => d[0] + 2 * column(table, "l2")[0] * x);

  let predicted: number | null = null;
  if (jsons.length > 0) {
    const rep = readReport(jsons[0]);
    if (typeof rep["predicted_slope"] !== "number") {
      throw new SchemaError(`${jsons[0]}: missing predicted_slope`);
    }
    predicted = rep["predicted_slope"];
  }

  const option = baseOption(
    spec.title ?? "diffusion norm growth",
    "t",
    "||q(t)||_D"
  );
  const series: SeriesOption[] = [
    line("measured ||q(t)||_D", t, d, { lineStyle: { width: 2 } }),
    line("ballistic bound", t, bound, { lineStyle: { type: "dashed" } }),
  ];
  if (predicted !== null) {
    series.push(
      line(
        "predicted slope",
        t,
        t.map((x) => predicted! * x),
        { lineStyle: { type: "dotted", width: 2 } }
      )
    );
  }
  option.series = series;
  return option;
}

/** IDS staircase k(E) overlaid with rho(E)/pi; the maximal deviation
 *  between the two is annotated in the title. */
function idsStaircase(spec: FigureSpec): EChartsOption {
  const { csvs } = splitInputs(spec.inputs);
  if (csvs.length < 1) {
    throw new SchemaError("ids-staircase needs the ids CSV");
  }
  const table = readTable(csvs[0]);
  requireColumns(table, ["E", "k", "rho_over_pi"]);
  const E = column(table, "E");
  const k = column(table, "k");
  const rp = column(table, "rho_over_pi");
  const dev = Math.max(...k.map((v, i) => Math.abs(v - rp[i])));
  const option = baseOption(
    spec.title ?? `integrated density of states (max |k - rho/pi| = ${dev.toExponential(2)})`,
    "E",
    "k(E)"
  );
  option.series = [
    line("k(E)", E, k, { step: "end" } as Partial<SeriesOption>),
    line("rho(E)/pi", E, rp, { lineStyle: { type: "dashed" } }),
  ];
  return option;
}

function curveFigure(
  spec: FigureSpec,
  ycol: string,
  errcol: string,
  yname: string
): EChartsOption {
  const { csvs } = splitInputs(spec.inputs);
  if (csvs.length < 1) {
    throw new SchemaError(`${spec.kind} needs a cocycle grid CSV`);
  }
  const table = readTable(csvs[0]);
  requireColumns(table, ["E", ycol, errcol]);
  const E = column(table, "E");
  const y = column(table, ycol);
  const err = column(table, errcol);
  const option = baseOption(spec.title ?? `${yname} over the energy grid`, "E", yname);
  option.series = [
    line(yname, E, y, { lineStyle: { width: 2 } }),
    line(
      "estimator error (x100)",
      E,
      err.map((e) => 100 * e),
      { lineStyle: { type: "dotted" } }
    ),
  ];
  return option;
}

interface SlopePoint {
  predicted: number;
  measured: number;
  label: string;
}

/** Predicted-vs-measured scatter, one point per slope report (or per row
 *  of a sweep CSV), with the identity line. */
function slopeCompare(spec: FigureSpec): EChartsOption {
  const { csvs, jsons } = splitInputs(spec.inputs);
  const points: SlopePoint[] = [];
  for (const path of jsons) {
    const rep = readReport(path);
    if (
      typeof rep["predicted_slope"] !== "number" ||
      typeof rep["measured_slope"] !== "number"
    ) {
      throw new SchemaError(`${path}: missing predicted_slope/measured_slope`);
    }
    points.push({
      predicted: rep["predicted_slope"],
      measured: rep["measured_slope"],
      label: path,
    });
  }
  for (const path of csvs) {
    const table = readTable(path);
    requireColumns(table, ["predicted", "measured"]);
    const p = column(table, "predicted");
    const m = column(table, "measured");
    p.forEach((v, i) => points.push({ predicted: v, measured: m[i], label: path }));
  }
  if (points.length === 0) {
    throw new SchemaError("slope-compare needs slope reports or a sweep CSV");
  }
  const lo = Math.min(...points.map((p) => Math.min(p.predicted, p.measured)));
  const hi = Math.max(...points.map((p) => Math.max(p.predicted, p.measured)));
  const pad = 0.05 * (hi - lo || 1);
  const option = baseOption(
    spec.title ?? "predicted vs measured ballistic slope",
    "predicted ||S q(0)||",
    "measured slope"
  );
  option.series = [
    {
      type: "scatter",
      name: "runs",
      symbolSize: 10,
      data: points.map((p) => [p.predicted, p.measured]),
    },
    line("identity", [lo - pad, hi + pad], [lo - pad, hi + pad], {
      lineStyle: { type: "dashed" },
    }),
  ];
  return option;
}

export function buildOption(spec: FigureSpec): EChartsOption {
  switch (spec.kind) {
    case "diffusion-growth":
      return diffusionGrowth(spec);
    case "ids-staircase":
      return idsStaircase(spec);
    case "rotation-curve":
      return curveFigure(spec, "rho", "rho_err", "rotation number");
    case "lyapunov-curve":
      return curveFigure(spec, "lyap", "lyap_err", "Lyapunov exponent");
    case "slope-compare":
      return slopeCompare(spec);
    default:
      throw new SchemaError(`unknown figure kind ${spec.kind}`);
  }
}
