export async function waitFor(cond: () => boolean, ms = 3000): Promise<void> {
  const start = Date.now();
  while (!cond()) {
    if (Date.now() - start > ms) {
      throw new Error("timed out waiting for condition");
    }
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
}

export function q<T extends HTMLElement>(selector: string): T {
  const node = document.querySelector(selector);
  if (!node) {
    throw new Error(`no element matches ${selector}`);
  }
  return node as T;
}

export function maybe(selector: string): HTMLElement | null {
  return document.querySelector(selector);
}

export function click(selector: string): void {
  q(selector).dispatchEvent(new MouseEvent("click", { bubbles: true, cancelable: true }));
}

export function typeAndSubmitFlag(value: string): void {
  const input = q<HTMLInputElement>("#flag-input");
  input.value = value;
  q<HTMLFormElement>("#flag-form").dispatchEvent(
    new Event("submit", { bubbles: true, cancelable: true }),
  );
}
