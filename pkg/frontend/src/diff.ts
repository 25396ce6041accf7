// Word-level diff between the original question and a candidate, used to
// highlight what a perturbation changed. Tokens are whitespace words; the
// candidate's bytes are never altered, only wrapped for display.

export interface DiffSpan {
  text: string;
  changed: boolean;
}

function lcsTable(a: string[], b: string[]): number[][] {
  const table: number[][] = Array.from({ length: a.length + 1 }, () =>
    new Array<number>(b.length + 1).fill(0),
  );
  for (let i = 1; i <= a.length; i++) {
    for (let j = 1; j <= b.length; j++) {
      table[i][j] =
        a[i - 1] === b[j - 1]
          ? table[i - 1][j - 1] + 1
          : Math.max(table[i - 1][j], table[i][j - 1]);
    }
  }
  return table;
}

/** Mark candidate words that are not part of a longest common subsequence
 * with the original words. */
export function diffCandidate(original: string, candidate: string): DiffSpan[] {
  const a = original.split(/\s+/).filter((w) => w.length > 0);
  const b = candidate.split(/\s+/).filter((w) => w.length > 0);
  const table = lcsTable(a, b);
  const keep = new Array<boolean>(b.length).fill(false);
  let i = a.length;
  let j = b.length;
  while (i > 0 && j > 0) {
    if (a[i - 1] === b[j - 1]) {
      keep[j - 1] = true;
      i--;
      j--;
    } else if (table[i - 1][j] >= table[i][j - 1]) {
      i--;
    } else {
      j--;
    }
  }
  return b.map((word, idx) => ({ text: word, changed: !keep[idx] }));
}

/** Original-side view: words the candidate dropped or replaced. */
export function diffOriginal(original: string, candidate: string): DiffSpan[] {
  const spans = diffCandidate(candidate, original);
  return spans;
}
