#!/usr/bin/env node
import { loadConfig } from './config';
import { exitCodeFor } from './errors';
import { exportCorpus } from './export';

function main(argv: string[]): number {
  if (argv[0] !== 'export' || argv[1] !== '--config' || !argv[2]) {
    process.stderr.write('usage: latent-export-adapter export --config <settings.json>\n');
    return 2;
  }
  try {
    const result = exportCorpus(loadConfig(argv[2]));
    process.stdout.write(
      `exported ${result.records.length} records; manifest at ${result.manifestPath}\n`,
    );
    return 0;
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    return exitCodeFor(err);
  }
}

process.exit(main(process.argv.slice(2)));
