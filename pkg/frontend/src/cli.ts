#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { FIGURE_KINDS, FigureKind } from "./figures.js";
import { renderToFile } from "./render.js";
import { SchemaError } from "./csv.js";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName("plotkit")
    .command("$0 <kind>", "render one figure from qplab artifacts", (y) =>
      y.positional("kind", {
        choices: FIGURE_KINDS as unknown as string[],
        describe: "figure kind",
        type: "string",
      })
    )
    .option("in", {
      alias: "i",
      type: "string",
      array: true,
      demandOption: true,
      describe: "input CSV/JSON artifact paths",
    })
    .option("out", {
      alias: "o",
      type: "string",
      demandOption: true,
      describe: "output SVG path",
    })
    .option("width", { type: "number", default: 800 })
    .option("height", { type: "number", default: 500 })
    .option("title", { type: "string" })
    .strict()
    .fail((msg, err) => {
      throw err ?? new Error(msg);
    })
    .parse();

  const path = renderToFile({
    kind: args.kind as FigureKind,
    inputs: args.in as string[],
    output: args.out,
    width: args.width,
    height: args.height,
    title: args.title,
  });
  console.log(`wrote ${path}`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");

if (invokedDirectly) {
  main(hideBin(process.argv))
    .then((code) => process.exit(code))
    .catch((err) => {
      const tag = err instanceof SchemaError ? "schema" : "error";
      console.error(`${tag}: ${err.message}`);
      process.exit(err instanceof SchemaError ? 2 : 1);
    });
}
