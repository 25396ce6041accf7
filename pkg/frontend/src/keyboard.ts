// Keyboard shortcuts: digits pick a candidate (1-based, 0 means the tenth),
// R rejects all, Enter submits the current choice.

export type KeyAction =
  | { type: 'select'; index: number }
  | { type: 'reject' }
  | { type: 'submit' };

export function actionForKey(key: string): KeyAction | null {
  if (key >= '1' && key <= '9') {
    return { type: 'select', index: Number(key) - 1 };
  }
  if (key === '0') {
    return { type: 'select', index: 9 };
  }
  if (key === 'r' || key === 'R') {
    return { type: 'reject' };
  }
  if (key === 'Enter') {
    return { type: 'submit' };
  }
  return null;
}

export function isTypingTarget(target: EventTarget | null): boolean {
  return (
    target instanceof HTMLInputElement ||
    target instanceof HTMLTextAreaElement ||
    target instanceof HTMLSelectElement
  );
}
