import * as crypto from 'crypto';
import * as fs from 'fs';
import * as path from 'path';

import { AdapterConfig } from './config';
import { LATENT_CHANNELS, resolveEncoder } from './encoder';
import { AdapterError } from './errors';
import { encodeNpy, float32Array, uint8Array } from './npy';
import { decodeNetpbm, RasterImage } from './ppm';

export const ADAPTER_VERSION = '0.1.0';

export interface ExportResult {
  manifestPath: string;
  checksumPath: string;
  records: string[];
}

function centerCrop(image: RasterImage, width: number, height: number): RasterImage {
  const offX = Math.floor((image.width - width) / 2);
  const offY = Math.floor((image.height - height) / 2);
  const pixels = new Uint8Array(width * height * image.channels);
  for (let y = 0; y < height; y++) {
    const src = ((y + offY) * image.width + offX) * image.channels;
    pixels.set(
      image.pixels.subarray(src, src + width * image.channels),
      y * width * image.channels,
    );
  }
  return { width, height, channels: image.channels, pixels };
}

function fitToFactor(image: RasterImage, latentSize: number, policy: string, name: string): RasterImage {
  const factor = Math.floor(Math.min(image.width, image.height) / latentSize);
  if (factor < 1) {
    throw new AdapterError('data', `${name}: image smaller than the latent grid`);
  }
  const side = factor * latentSize;
  if (image.width === side && image.height === side) {
    return image;
  }
  if (policy === 'strict') {
    throw new AdapterError(
      'data',
      `${name}: ${image.width}x${image.height} does not match a square multiple ` +
        `of the latent size ${latentSize} (use resize_policy 'center-crop')`,
    );
  }
  return centerCrop(image, side, side);
}

function maskToIds(
  mask: RasterImage,
  config: AdapterConfig,
  name: string,
): Uint8Array {
  if (mask.channels === 1) {
    return mask.pixels; // id passthrough
  }
  if (!config.palette) {
    throw new AdapterError(
      'data',
      `${name}: color-coded mask but no palette configured`,
    );
  }
  const table = new Map<string, number>();
  for (const entry of config.palette) {
    table.set(entry.color.join(','), entry.id);
  }
  const ids = new Uint8Array(mask.width * mask.height);
  for (let i = 0; i < ids.length; i++) {
    const key = `${mask.pixels[i * 3]},${mask.pixels[i * 3 + 1]},${mask.pixels[i * 3 + 2]}`;
    const id = table.get(key);
    if (id === undefined) {
      throw new AdapterError('data', `${name}: unknown palette color (${key})`);
    }
    ids[i] = id;
  }
  return ids;
}

function sha256(buffer: Buffer): string {
  return crypto.createHash('sha256').update(buffer).digest('hex');
}

function listDatasetImages(root: string): string[] {
  const imageDir = path.join(root, 'images');
  if (!fs.existsSync(imageDir)) {
    throw new AdapterError('data', `dataset has no images/ directory under ${root}`);
  }
  return fs
    .readdirSync(imageDir)
    .filter((f) => f.endsWith('.ppm') || f.endsWith('.pgm'))
    .sort();
}

function findMask(root: string, stem: string): string {
  for (const ext of ['.ppm', '.pgm']) {
    const candidate = path.join(root, 'masks', stem + ext);
    if (fs.existsSync(candidate)) return candidate;
  }
  throw new AdapterError('data', `no mask found for image '${stem}'`);
}

/**
 * Encode every dataset image to a latent, convert its mask to class ids,
 * and write array files plus a manifest the prior toolkit loads as-is.
 */
export function exportCorpus(config: AdapterConfig): ExportResult {
  const encode = resolveEncoder(config.encoder);
  const names = listDatasetImages(config.datasetRoot);
  if (names.length === 0) {
    throw new AdapterError('data', `dataset at ${config.datasetRoot} has no images`);
  }
  fs.mkdirSync(path.join(config.outputDir, 'latents'), { recursive: true });
  fs.mkdirSync(path.join(config.outputDir, 'masks'), { recursive: true });

  const manifestRows: string[] = [];
  const checksums: Record<string, string> = {};
  const records: string[] = [];
  for (const name of names) {
    const stem = name.replace(/\.(ppm|pgm)$/, '');
    const image = decodeNetpbm(
      fs.readFileSync(path.join(config.datasetRoot, 'images', name)),
    );
    const mask = decodeNetpbm(fs.readFileSync(findMask(config.datasetRoot, stem)));
    if (mask.width !== image.width || mask.height !== image.height) {
      throw new AdapterError(
        'data',
        `${stem}: mask ${mask.width}x${mask.height} does not match image ` +
          `${image.width}x${image.height}`,
      );
    }
    const fitted = fitToFactor(image, config.latentSize, config.resizePolicy, stem);
    const fittedMask = fitToFactor(mask, config.latentSize, config.resizePolicy, stem);

    const latent = encode(fitted, config.latentSize);
    for (let i = 0; i < latent.length; i++) latent[i] *= config.latentScale;
    const ids = maskToIds(fittedMask, config, stem);

    const latentRel = `latents/${stem}.arr`;
    const maskRel = `masks/${stem}.arr`;
    const latentBytes = encodeNpy(
      float32Array([config.latentSize, config.latentSize, LATENT_CHANNELS], latent),
    );
    const maskBytes = encodeNpy(
      uint8Array([fittedMask.height, fittedMask.width], ids),
    );
    fs.writeFileSync(path.join(config.outputDir, latentRel), latentBytes);
    fs.writeFileSync(path.join(config.outputDir, maskRel), maskBytes);
    checksums[latentRel] = sha256(latentBytes);
    checksums[maskRel] = sha256(maskBytes);
    manifestRows.push(`${latentRel}\t${maskRel}\t${stem}`);
    records.push(stem);
  }

  const manifestPath = path.join(config.outputDir, 'manifest.tsv');
  const header = [
    `# adapter_version: ${ADAPTER_VERSION}`,
    `# encoder: ${config.encoder}`,
    `# latent_scale: ${config.latentScale}`,
    `# split: ${config.split}`,
    `# ignore_id: ${config.ignoreId}`,
  ];
  fs.writeFileSync(manifestPath, header.concat(manifestRows).join('\n') + '\n', 'utf-8');

  const checksumPath = path.join(config.outputDir, 'checksums.json');
  const sortedChecksums = Object.fromEntries(
    Object.entries(checksums).sort(([a], [b]) => (a < b ? -1 : 1)),
  );
  fs.writeFileSync(checksumPath, JSON.stringify(sortedChecksums, null, 2) + '\n', 'utf-8');
  return { manifestPath, checksumPath, records };
}
