// Display-only handling of tagged response text. The service owns all
// scoring; this module just decides what to show in which panel, and
// is deliberately lenient: anything unrecognized falls through to the
// proof panel as raw text.

export interface DisplaySections {
  tech: string | null;
  sketch: string | null;
  proof: string;
}

function grab(text: string, tag: string): string | null {
  const match = new RegExp(`<${tag}>\\n?([\\s\\S]*?)\\n?</${tag}>`, "i").exec(text);
  return match ? match[1]! : null;
}

export function splitSections(text: string): DisplaySections {
  const tech = grab(text, "tech");
  const sketch = grab(text, "sketch");
  const proof = grab(text, "proof");
  if (tech === null && sketch === null && proof === null) {
    return { tech: null, sketch: null, proof: text };
  }
  return { tech, sketch, proof: proof ?? "" };
}

export type TextPiece =
  | { kind: "text"; value: string }
  | { kind: "math"; value: string };

/**
 * Split a string on $...$ spans for best-effort math display. The raw
 * text is always preserved; math pieces only get different styling.
 */
export function splitMath(text: string): TextPiece[] {
  const pieces: TextPiece[] = [];
  let rest = text;
  for (;;) {
    const match = /\$([^$]+)\$/.exec(rest);
    if (!match) break;
    if (match.index > 0) pieces.push({ kind: "text", value: rest.slice(0, match.index) });
    pieces.push({ kind: "math", value: match[1]! });
    rest = rest.slice(match.index + match[0].length);
  }
  if (rest.length > 0) pieces.push({ kind: "text", value: rest });
  return pieces;
}
