// Min/max decimation: one (min, max) pair per pixel column so that no
// transient ever disappears, however hard the trace is squeezed. Naive
// subsampling would drop heartbeat or stimulus spikes between samples.

export type MinMax = [number, number];

/**
 * Reduce `samples` to `columns` (min, max) pairs. Every sample lands in
 * exactly one bucket, so any extreme value survives in its column. With
 * fewer samples than columns, one pair per sample is returned.
 */
export function minMaxDecimate(samples: ArrayLike<number>, columns: number): MinMax[] {
  const n = samples.length;
  if (columns <= 0 || n === 0) return [];
  const buckets = Math.min(columns, n);
  const out: MinMax[] = new Array(buckets);
  for (let b = 0; b < buckets; b++) {
    const start = Math.floor((b * n) / buckets);
    const end = Math.floor(((b + 1) * n) / buckets);
    let lo = samples[start];
    let hi = samples[start];
    for (let i = start + 1; i < end; i++) {
      const v = samples[i];
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    out[b] = [lo, hi];
  }
  return out;
}
