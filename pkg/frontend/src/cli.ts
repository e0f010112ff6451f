#!/usr/bin/env node
/**
 * fvasd-extract extract --job job.json
 *
 * Runs an extraction job and prints the job log path. Exit codes:
 * 0 success, 2 usage, 3 bad inputs.
 */

import * as path from "node:path";

import { loadJob, runJob } from "./extract.js";

function usage(): never {
  console.error("usage: fvasd-extract extract --job <job.json>");
  process.exit(2);
}

function main(argv: string[]): number {
  if (argv.length < 1 || argv[0] !== "extract") usage();
  const jobFlag = argv.indexOf("--job");
  if (jobFlag < 0 || jobFlag + 1 >= argv.length) usage();
  try {
    const job = loadJob(argv[jobFlag + 1]);
    const log = runJob(job);
    console.log(
      `wrote ${log.tracks_written} tracks and ${log.utterances_written} utterances ` +
        `(${log.skipped_utterances.length} skipped) to ${job.out_dir}`,
    );
    console.log(path.join(job.out_dir, "job_log.json"));
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 3;
  }
}

process.exit(main(process.argv.slice(2)));
