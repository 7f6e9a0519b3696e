export type AdapterErrorKind = 'config' | 'data' | 'environment';

export class AdapterError extends Error {
  readonly kind: AdapterErrorKind;

  constructor(kind: AdapterErrorKind, message: string) {
    super(message);
    this.name = 'AdapterError';
    this.kind = kind;
  }
}

export function exitCodeFor(err: unknown): number {
  if (err instanceof AdapterError) {
    switch (err.kind) {
      case 'config':
        return 2;
      case 'data':
        return 3;
      case 'environment':
        return 4;
    }
  }
  return 1;
}
