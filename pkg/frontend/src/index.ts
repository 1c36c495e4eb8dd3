export { readTable, readReport, requireColumns, column, SchemaError } from "./csv.js";
export { buildOption, FIGURE_KINDS } from "./figures.js";
export type { FigureKind, FigureSpec } from "./figures.js";
export { renderSvg, renderToFile } from "./render.js";
