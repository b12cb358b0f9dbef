/**
 * Filter tokens: the token+dropdown model the filter bar edits, and its
 * serialization to the server's filter expression language. The server is
 * the only parser; the client never evaluates filters.
 */

export type FieldType = 'numeric' | 'string' | 'boolean';

export const FIELDS: Record<string, FieldType> = {
  los: 'numeric',
  age: 'numeric',
  total_charges: 'numeric',
  total_costs: 'numeric',
  contribution_margin: 'numeric',
  department: 'string',
  gender: 'string',
  procedure: 'string',
  diagnosis: 'string',
  died: 'boolean',
  open: 'boolean',
};

export const NUMERIC_OPS = ['=', '!=', '<', '<=', '>', '>='] as const;
export const EQUALITY_OPS = ['=', '!='] as const;

export interface FilterToken {
  field: string;
  op: string;
  value: string; // display form; typed per field when serialized
}

export function opsForField(field: string): readonly string[] {
  return FIELDS[field] === 'numeric' ? NUMERIC_OPS : EQUALITY_OPS;
}

export function validateToken(t: FilterToken): string | null {
  const type = FIELDS[t.field];
  if (!type) return `unknown field ${t.field}`;
  if (!opsForField(t.field).includes(t.op)) {
    return `operator ${t.op} not allowed on ${t.field}`;
  }
  if (type === 'numeric' && !/^-?\d+(\.\d+)?$/.test(t.value.trim())) {
    return `${t.field} needs a number`;
  }
  if (type === 'boolean' && !/^(true|false)$/i.test(t.value.trim())) {
    return `${t.field} needs true or false`;
  }
  return null;
}

function literal(t: FilterToken): string {
  const type = FIELDS[t.field];
  if (type === 'numeric') return t.value.trim();
  if (type === 'boolean') return t.value.trim().toLowerCase();
  return '"' + t.value.replace(/\\/g, '\\\\').replace(/"/g, '\\"') + '"';
}

/** Tokens AND-ed together in order, the filter bar's semantics. */
export function serializeTokens(tokens: FilterToken[]): string {
  return tokens.map((t) => `${t.field} ${t.op} ${literal(t)}`).join(' AND ');
}

/**
 * Inverse of serializeTokens for AND-only expressions (the only shape the
 * filter bar writes into URLs). Anything fancier is left to the server.
 */
export function parseTokens(text: string): FilterToken[] | null {
  if (!text.trim()) return [];
  const tokens: FilterToken[] = [];
  const re = /^\s*([a-z_]+)\s*(<=|>=|!=|=|<|>)\s*("(?:\\.|[^"\\])*"|-?\d+(?:\.\d+)?|true|false)\s*/i;
  let rest = text;
  for (;;) {
    const m = re.exec(rest);
    if (!m) return null;
    let value = m[3];
    if (value.startsWith('"')) {
      value = value.slice(1, -1).replace(/\\(.)/g, '$1');
    }
    tokens.push({ field: m[1], op: m[2], value });
    rest = rest.slice(m[0].length);
    if (!rest.trim()) return tokens;
    const and = /^AND\s+/i.exec(rest.trimStart());
    if (!and) return null;
    rest = rest.trimStart().slice(and[0].length);
  }
}

/** The Figure-2b drill-down example, used as the filter bar placeholder. */
export const EXAMPLE_TOKENS: FilterToken[] = [
  { field: 'department', op: '=', value: 'cardiology' },
  { field: 'procedure', op: '=', value: 'stent' },
  { field: 'los', op: '>=', value: '7' },
];
