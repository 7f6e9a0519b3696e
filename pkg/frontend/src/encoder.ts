/*
 * Off-the-shelf latent encoders. At this scale the encoder is a fixed
 * patch reduction: mean R/G/B of each patch rescaled to [-1, 1] plus the
 * patch brightness spread, giving the 4-channel latents the toolkit
 * expects. The identifier is recorded in the manifest so banks stay tied
 * to the encoder that produced them.
 */

import { AdapterError } from './errors';
import { RasterImage } from './ppm';

export type Encoder = (image: RasterImage, latentSize: number) => Float32Array;

export const LATENT_CHANNELS = 4;

function patchMeanV1(image: RasterImage, latentSize: number): Float32Array {
  if (image.channels !== 3) {
    throw new AdapterError('data', 'patch-mean-v1 expects RGB input');
  }
  if (image.width % latentSize !== 0 || image.height % latentSize !== 0) {
    throw new AdapterError(
      'data',
      `image ${image.width}x${image.height} is not divisible by latent size ${latentSize}`,
    );
  }
  const fy = image.height / latentSize;
  const fx = image.width / latentSize;
  const out = new Float32Array(latentSize * latentSize * LATENT_CHANNELS);
  for (let ly = 0; ly < latentSize; ly++) {
    for (let lx = 0; lx < latentSize; lx++) {
      let sumR = 0;
      let sumG = 0;
      let sumB = 0;
      let sumGray = 0;
      let sumGraySq = 0;
      for (let y = ly * fy; y < (ly + 1) * fy; y++) {
        for (let x = lx * fx; x < (lx + 1) * fx; x++) {
          const p = (y * image.width + x) * 3;
          const r = image.pixels[p];
          const g = image.pixels[p + 1];
          const b = image.pixels[p + 2];
          sumR += r;
          sumG += g;
          sumB += b;
          const gray = (r + g + b) / 3;
          sumGray += gray;
          sumGraySq += gray * gray;
        }
      }
      const n = fy * fx;
      const meanGray = sumGray / n;
      const variance = Math.max(sumGraySq / n - meanGray * meanGray, 0);
      const base = (ly * latentSize + lx) * LATENT_CHANNELS;
      out[base] = (sumR / n / 255) * 2 - 1;
      out[base + 1] = (sumG / n / 255) * 2 - 1;
      out[base + 2] = (sumB / n / 255) * 2 - 1;
      out[base + 3] = Math.sqrt(variance) / 255;
    }
  }
  return out;
}

const ENCODERS: Record<string, Encoder> = {
  'patch-mean-v1': patchMeanV1,
};

export function resolveEncoder(identifier: string): Encoder {
  const encoder = ENCODERS[identifier];
  if (!encoder) {
    throw new AdapterError(
      'environment',
      `encoder '${identifier}' is not available (known: ${Object.keys(ENCODERS).join(', ')})`,
    );
  }
  return encoder;
}
