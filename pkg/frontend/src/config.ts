import * as fs from 'fs';

import { AdapterError } from './errors';

export type PaletteEntry = {
  color: [number, number, number];
  id: number;
};

export interface AdapterConfig {
  datasetRoot: string;
  outputDir: string;
  /** Registered encoder identifier, e.g. "patch-mean-v1". */
  encoder: string;
  /** Output latent grid side length (latents are square at this scale). */
  latentSize: number;
  /** Color -> class id table; null means masks are id-coded grayscale. */
  palette: PaletteEntry[] | null;
  /** 'strict' rejects images not divisible by latentSize; 'center-crop' trims. */
  resizePolicy: 'strict' | 'center-crop';
  /** Multiplier applied to encoded latents, recorded in the manifest header. */
  latentScale: number;
  /** Dataset split the priors are meant to come from, recorded in metadata. */
  split: string;
  ignoreId: number;
}

export function validatePalette(entries: PaletteEntry[]): void {
  const seenColors = new Set<string>();
  const seenIds = new Set<number>();
  for (const entry of entries) {
    const [r, g, b] = entry.color;
    for (const v of entry.color) {
      if (!Number.isInteger(v) || v < 0 || v > 255) {
        throw new AdapterError('config', `palette color component out of range: ${entry.color}`);
      }
    }
    if (!Number.isInteger(entry.id) || entry.id < 0 || entry.id > 255) {
      throw new AdapterError('config', `palette id out of range: ${entry.id}`);
    }
    const key = `${r},${g},${b}`;
    if (seenColors.has(key)) {
      throw new AdapterError('config', `duplicate palette color ${key}`);
    }
    if (seenIds.has(entry.id)) {
      throw new AdapterError('config', `palette maps two colors to id ${entry.id}`);
    }
    seenColors.add(key);
    seenIds.add(entry.id);
  }
}

export function parseConfig(raw: unknown, baseDir: string): AdapterConfig {
  if (typeof raw !== 'object' || raw === null) {
    throw new AdapterError('config', 'config must be a JSON object');
  }
  const obj = raw as Record<string, unknown>;
  const need = (key: string): unknown => {
    if (!(key in obj)) throw new AdapterError('config', `config missing key '${key}'`);
    return obj[key];
  };
  const datasetRoot = String(need('dataset_root'));
  const outputDir = String(need('output_dir'));
  const encoder = String(need('encoder'));
  const latentSize = Number(obj['latent_size'] ?? 16);
  if (!Number.isInteger(latentSize) || latentSize < 1) {
    throw new AdapterError('config', `latent_size must be a positive integer, got ${obj['latent_size']}`);
  }
  const resizePolicy = String(obj['resize_policy'] ?? 'strict');
  if (resizePolicy !== 'strict' && resizePolicy !== 'center-crop') {
    throw new AdapterError('config', `resize_policy must be 'strict' or 'center-crop', got '${resizePolicy}'`);
  }
  const latentScale = Number(obj['latent_scale'] ?? 1.0);
  if (!(latentScale > 0) || !Number.isFinite(latentScale)) {
    throw new AdapterError('config', `latent_scale must be positive, got ${obj['latent_scale']}`);
  }
  let palette: PaletteEntry[] | null = null;
  if (obj['palette'] != null) {
    if (!Array.isArray(obj['palette'])) {
      throw new AdapterError('config', 'palette must be a list of {color, id} entries');
    }
    palette = (obj['palette'] as unknown[]).map((entry) => {
      const e = entry as Record<string, unknown>;
      const color = e['color'];
      if (!Array.isArray(color) || color.length !== 3) {
        throw new AdapterError('config', `palette entry needs a 3-component color, got ${JSON.stringify(entry)}`);
      }
      return {
        color: [Number(color[0]), Number(color[1]), Number(color[2])] as [number, number, number],
        id: Number(e['id']),
      };
    });
    validatePalette(palette);
  }
  const ignoreId = Number(obj['ignore_id'] ?? 255);
  if (!Number.isInteger(ignoreId) || ignoreId < 0 || ignoreId > 255) {
    throw new AdapterError('config', `ignore_id must be in [0, 255], got ${obj['ignore_id']}`);
  }
  const resolve = (p: string): string =>
    p.startsWith('/') ? p : `${baseDir}/${p}`;
  return {
    datasetRoot: resolve(datasetRoot),
    outputDir: resolve(outputDir),
    encoder,
    latentSize,
    palette,
    resizePolicy,
    latentScale,
    split: String(obj['split'] ?? 'train'),
    ignoreId,
  };
}

export function loadConfig(path: string): AdapterConfig {
  if (!fs.existsSync(path)) {
    throw new AdapterError('config', `config file does not exist: ${path}`);
  }
  let raw: unknown;
  try {
    raw = JSON.parse(fs.readFileSync(path, 'utf-8'));
  } catch (err) {
    throw new AdapterError('config', `invalid JSON in ${path}: ${err}`);
  }
  const baseDir = path.includes('/') ? path.slice(0, path.lastIndexOf('/')) : '.';
  return parseConfig(raw, baseDir);
}
