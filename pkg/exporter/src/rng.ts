/** Small deterministic PRNG (mulberry32); good enough for pattern noise. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Derive a child seed from a base seed and a stream index. */
export function childSeed(seed: number, stream: number): number {
  const rand = mulberry32((seed ^ Math.imul(stream + 1, 0x9e3779b1)) >>> 0);
  return Math.floor(rand() * 4294967296) >>> 0;
}
