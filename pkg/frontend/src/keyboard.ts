/** One-keystroke labeling: digits map onto the session's suggested theme
 * vocabulary (1-based); anything else is free-text entry territory. */

export function themeForKey(key: string, suggested: string[]): string | null {
  if (!/^[1-9]$/.test(key)) {
    return null;
  }
  return suggested[Number(key) - 1] ?? null;
}

export function shortcutLegend(suggested: string[]): Array<{ key: string; theme: string }> {
  return suggested.slice(0, 9).map((theme, index) => ({ key: String(index + 1), theme }));
}
