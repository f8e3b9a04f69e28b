/** Character-level LCS diff for the parent-vs-evolved side-by-side pane. */

export interface DiffSpan {
  kind: "same" | "added" | "removed";
  text: string;
}

export function diffTexts(parent: string, evolved: string): DiffSpan[] {
  const a = Array.from(parent);
  const b = Array.from(evolved);
  // LCS table; instruction texts are short enough for the quadratic table
  const m = a.length;
  const n = b.length;
  const lcs: number[][] = Array.from({ length: m + 1 }, () => new Array(n + 1).fill(0));
  for (let i = m - 1; i >= 0; i--) {
    for (let j = n - 1; j >= 0; j--) {
      lcs[i][j] = a[i] === b[j] ? lcs[i + 1][j + 1] + 1 : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const spans: DiffSpan[] = [];
  const push = (kind: DiffSpan["kind"], ch: string) => {
    const last = spans[spans.length - 1];
    if (last && last.kind === kind) {
      last.text += ch;
    } else {
      spans.push({ kind, text: ch });
    }
  };
  let i = 0;
  let j = 0;
  while (i < m && j < n) {
    if (a[i] === b[j]) {
      push("same", a[i]);
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      push("removed", a[i]);
      i++;
    } else {
      push("added", b[j]);
      j++;
    }
  }
  while (i < m) push("removed", a[i++]);
  while (j < n) push("added", b[j++]);
  return spans;
}
