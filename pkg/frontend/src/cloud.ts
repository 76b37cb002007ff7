/** Word-cloud model: pure data so the rendering rules are testable.
 *
 * Messages are sets of words, so every word renders exactly once, in the
 * server-provided shuffled order, at a uniform font size — there is no
 * per-word size or weight channel that could leak attention magnitudes.
 * "Randomized layout" is a small deterministic jitter seeded by the item
 * id, so a re-render never reshuffles the cloud under the annotator.
 */

export interface CloudWord {
  text: string;
  /** horizontal jitter, px */
  dx: number;
  /** vertical jitter, px */
  dy: number;
  /** rotation, degrees */
  rot: number;
}

export interface CloudModel {
  words: CloudWord[];
  /** true when the message is empty; the UI shows "(no words selected)"
   * and still allows a label. */
  placeholder: boolean;
}

export const EMPTY_MESSAGE_PLACEHOLDER = "(no words selected)";

export function crc32(text: string): number {
  let crc = 0xffffffff;
  for (let i = 0; i < text.length; i++) {
    crc ^= text.charCodeAt(i) & 0xff;
    for (let bit = 0; bit < 8; bit++) {
      crc = (crc >>> 1) ^ (0xedb88320 & -(crc & 1));
    }
  }
  return (crc ^ 0xffffffff) >>> 0;
}

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

export function cloudModel(tokens: string[], itemId: string): CloudModel {
  const seen = new Set<string>();
  const unique: string[] = [];
  for (const token of tokens) {
    if (!seen.has(token)) {
      seen.add(token);
      unique.push(token); // server order, first occurrence wins
    }
  }
  const rand = mulberry32(crc32(itemId));
  const words = unique.map((text) => ({
    text,
    dx: Math.round((rand() * 2 - 1) * 12),
    dy: Math.round((rand() * 2 - 1) * 6),
    rot: Math.round((rand() * 2 - 1) * 6),
  }));
  return { words, placeholder: words.length === 0 };
}
