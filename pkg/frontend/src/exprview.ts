/**
 * Evaluate a candidate's prefix token sequence at data points, purely for
 * the overlay plot. Fitted constants bind to placeholder slots in order of
 * appearance; pinned pointer values come from the request. Metrics shown in
 * tables never come from here.
 */

const UNARY: Record<string, (a: number) => number> = {
  sqrt: Math.sqrt,
  pow2: (a) => a * a,
  pow3: (a) => a * a * a,
  pow4: (a) => (a * a) * (a * a),
  inv: (a) => 1 / a,
  log: Math.log,
  exp: Math.exp,
  sin: Math.sin,
  cos: Math.cos,
  asin: Math.asin,
};

const BINARY: Record<string, (a: number, b: number) => number> = {
  add: (a, b) => a + b,
  sub: (a, b) => a - b,
  mul: (a, b) => a * b,
  div: (a, b) => a / b,
};

export class PrefixEvalError extends Error {}

export function evaluatePrefix(
  tokens: readonly string[],
  constants: Record<string, number>,
  pointers: Record<number, number>,
  point: readonly number[],
): number {
  let pos = 0;
  let slot = 0;

  const walk = (): number => {
    const token = tokens[pos++];
    if (token === undefined) {
      throw new PrefixEvalError("prefix sequence ended early");
    }
    const unary = UNARY[token];
    if (unary) return unary(walk());
    const binary = BINARY[token];
    if (binary) {
      const a = walk();
      return binary(a, walk());
    }
    if (token === "c") {
      const v = constants[String(slot++)];
      return v === undefined ? NaN : v;
    }
    const pointer = token.match(/^pointer_(\d+)$/);
    if (pointer) {
      const v = pointers[Number(pointer[1])];
      return v === undefined ? NaN : v;
    }
    const variable = token.match(/^x(\d+)$/);
    if (variable) {
      const v = point[Number(variable[1]) - 1];
      if (v === undefined) {
        throw new PrefixEvalError(`point has no value for ${token}`);
      }
      return v;
    }
    const literal = Number(token);
    if (!Number.isNaN(literal)) return literal;
    throw new PrefixEvalError(`unknown token "${token}"`);
  };

  const value = walk();
  if (pos !== tokens.length) {
    throw new PrefixEvalError("trailing tokens after a complete expression");
  }
  return value;
}
