/*
 * Builds the committed cross-component fixture: a 3-image dataset exported
 * through the adapter into fixture-out/, which the prior toolkit's test
 * suite loads back and checks checksums against.
 */

import * as fs from 'fs';
import * as path from 'path';

import { exportCorpus } from '../src/export';
import { PALETTE, writeDataset } from './dataset';

const root = path.join(__dirname, '..', '..', 'fixture-out');
fs.rmSync(root, { recursive: true, force: true });
writeDataset(path.join(root, 'dataset'), 3);
const result = exportCorpus({
  datasetRoot: path.join(root, 'dataset'),
  outputDir: path.join(root, 'export'),
  encoder: 'patch-mean-v1',
  latentSize: 16,
  palette: PALETTE,
  resizePolicy: 'strict',
  latentScale: 1.0,
  split: 'train',
  ignoreId: 255,
});
process.stdout.write(`fixture ready: ${result.manifestPath}\n`);
