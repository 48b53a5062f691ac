// Command line front end. Exit codes: 0 ok, 1 extraction error, 2 usage.

import { parseArgs } from "node:util";
import { listBackbones } from "./backbone.js";
import { runExtract } from "./extract.js";

const USAGE = `usage: extract --images DIR --domain sketch|photo [--backbone NAME] --out DIR [--append]
       extract --embeddings FILE --out DIR [--append]

Writes manifest.json + features.f32le (plus extract.report.json) to --out.

  --images DIR       image root, one subdirectory per category
  --domain NAME      domain tag for the extracted features: sketch or photo
  --backbone NAME    feature backbone (default rp4096; known: ${listBackbones().join(", ")})
  --embeddings FILE  JSON table {category: [numbers]}; written as the embedding domain
  --out DIR          output manifest directory
  --append           merge into an existing manifest at --out (new domain only)
  --help             show this help
`;

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        images: { type: "string" },
        domain: { type: "string" },
        backbone: { type: "string" },
        embeddings: { type: "string" },
        out: { type: "string" },
        append: { type: "boolean", default: false },
        help: { type: "boolean", default: false },
      },
      allowPositionals: false,
    }));
  } catch (e) {
    console.error(e instanceof Error ? e.message : String(e));
    console.error(USAGE);
    return 2;
  }

  if (values.help) {
    console.log(USAGE);
    return 0;
  }
  const usageError = (msg: string) => {
    console.error(`error: ${msg}`);
    console.error(USAGE);
    return 2;
  };
  if (!values.out) return usageError("--out is required");
  if (values.images !== undefined && values.embeddings !== undefined) {
    return usageError("--images and --embeddings are mutually exclusive");
  }
  if (values.images === undefined && values.embeddings === undefined) {
    return usageError("one of --images or --embeddings is required");
  }
  if (values.images !== undefined) {
    if (values.domain !== "sketch" && values.domain !== "photo") {
      return usageError("--domain must be sketch or photo");
    }
  } else if (values.domain !== undefined || values.backbone !== undefined) {
    return usageError("--domain and --backbone do not apply to --embeddings");
  }

  try {
    const report = runExtract({
      out: values.out,
      images: values.images,
      domain: values.domain,
      backbone: values.backbone,
      embeddings: values.embeddings,
      append: values.append,
    });
    const skipNote = report.skipped.length > 0 ? `, skipped ${report.skipped.length} (see extract.report.json)` : "";
    console.log(`wrote ${report.usable} ${report.domain} records (dim ${report.width}) to ${values.out}${skipNote}`);
    return 0;
  } catch (e) {
    console.error(`error: ${e instanceof Error ? e.message : String(e)}`);
    return 1;
  }
}
