/** Small DOM construction helpers; no templating, no virtual tree. */

type Child = Node | string | null | undefined;

export interface ElProps {
  className?: string;
  text?: string;
  title?: string;
  type?: string;
  value?: string;
  placeholder?: string;
  min?: string;
  max?: string;
  step?: string;
  disabled?: boolean;
  onClick?: (ev: Event) => void;
  onInput?: (ev: Event) => void;
  onChange?: (ev: Event) => void;
}

export function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  props: ElProps = {},
  children: Child[] = [],
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (props.className) node.className = props.className;
  if (props.text !== undefined) node.textContent = props.text;
  if (props.title) node.title = props.title;
  const input = node as unknown as HTMLInputElement;
  if (props.type !== undefined) input.type = props.type;
  if (props.value !== undefined) input.value = props.value;
  if (props.placeholder !== undefined) input.placeholder = props.placeholder;
  if (props.min !== undefined) input.min = props.min;
  if (props.max !== undefined) input.max = props.max;
  if (props.step !== undefined) input.step = props.step;
  if (props.disabled !== undefined) input.disabled = props.disabled;
  if (props.onClick) node.addEventListener("click", props.onClick);
  if (props.onInput) node.addEventListener("input", props.onInput);
  if (props.onChange) node.addEventListener("change", props.onChange);
  for (const child of children) {
    if (child == null) continue;
    node.append(child);
  }
  return node;
}

export function clear(node: Element): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function option(doc: Document, value: string, label?: string): HTMLOptionElement {
  const o = doc.createElement("option");
  o.value = value;
  o.textContent = label ?? value;
  return o;
}

/** Sim-clock nanoseconds rendered as seconds with millisecond detail. */
export function fmtSimNs(ns: number | null): string {
  if (ns == null) return "-";
  return `${(ns / 1e9).toFixed(3)}s`;
}

export function fmtScore(score: number): string {
  return score.toFixed(1);
}
