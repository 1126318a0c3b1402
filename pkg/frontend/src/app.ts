import { ApiClient, ApiError, HintView, LevelInfo, LevelSummary, Submission } from "./api.js";

// Client-side view state. The server stays authoritative: the hint list is
// always whatever the last GET returned, completion marks come from the
// progress endpoint, and verdicts come from the validation endpoint.
type UiState = {
  levels: LevelSummary[];
  selected: string | null;
  info: LevelInfo | null;
  hints: HintView | null;
  completed: Set<string>;
  submissions: Submission[];
  verdict: "correct" | "incorrect" | null;
  notice: string | null;
  revealDisabled: boolean;
  showWriteup: boolean;
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export class App {
  private state: UiState = {
    levels: [],
    selected: null,
    info: null,
    hints: null,
    completed: new Set(),
    submissions: [],
    verdict: null,
    notice: null,
    revealDisabled: false,
    showWriteup: false,
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {}

  async boot(): Promise<void> {
    try {
      this.state.levels = await this.api.listLevels();
      await this.refreshProgress();
    } catch (err) {
      this.state.notice = describe(err);
    }
    this.render();
  }

  private async refreshProgress(): Promise<void> {
    const progress = await this.api.progress();
    this.state.completed = new Set(progress.completed);
    this.state.submissions = progress.submissions;
  }

  async selectLevel(ref: string): Promise<void> {
    this.state.selected = ref;
    this.state.verdict = null;
    this.state.showWriteup = false;
    try {
      this.state.info = await this.api.levelInfo(ref);
      this.state.hints = await this.api.hints(ref);
      this.state.revealDisabled = this.state.hints.revealed >= this.state.hints.total;
    } catch (err) {
      this.state.notice = describe(err);
    }
    this.render();
  }

  backToList(): void {
    this.state.selected = null;
    this.state.info = null;
    this.state.hints = null;
    this.state.verdict = null;
    this.render();
  }

  async revealNext(): Promise<void> {
    const ref = this.state.selected;
    if (!ref) return;
    try {
      await this.api.revealHint(ref);
    } catch (err) {
      if (err instanceof ApiError && err.code === "already_at_end") {
        this.state.revealDisabled = true;
      } else {
        this.state.notice = describe(err);
      }
    }
    // single source of truth: re-fetch and display the server's view
    try {
      this.state.hints = await this.api.hints(ref);
      this.state.revealDisabled = this.state.hints.revealed >= this.state.hints.total;
    } catch (err) {
      this.state.notice = describe(err);
    }
    this.render();
  }

  async submitFlag(text: string): Promise<void> {
    const ref = this.state.selected;
    if (!ref) return;
    try {
      this.state.verdict = await this.api.submitFlag(ref, text);
      await this.refreshProgress();
    } catch (err) {
      this.state.notice = describe(err);
    }
    this.render();
  }

  dismissNotice(): void {
    this.state.notice = null;
    this.render();
  }

  // -- rendering -------------------------------------------------------------

  render(): void {
    this.root.replaceChildren();
    const header = el("header");
    header.append(el("h1", {}, "Thunder CTF"));
    this.root.append(header);
    if (this.state.notice) {
      this.root.append(this.renderNotice(this.state.notice));
    }
    if (this.state.selected && this.state.info) {
      this.root.append(this.renderLevel(this.state.info));
    } else {
      this.root.append(this.renderList());
    }
  }

  private renderNotice(message: string): HTMLElement {
    const box = el("div", { id: "notice", class: "notice", role: "alert" });
    box.append(el("span", {}, message));
    const dismiss = el("button", { id: "notice-dismiss", type: "button" }, "dismiss");
    dismiss.addEventListener("click", () => this.dismissNotice());
    box.append(dismiss);
    return box;
  }

  private renderList(): HTMLElement {
    const section = el("section", { id: "level-list-view" });
    section.append(el("h2", {}, "Levels"));
    const list = el("ul", { id: "level-list" });
    for (const level of this.state.levels) {
      const item = el("li", { "data-ref": level.ref });
      const link = el("a", { href: `#/${level.ref}`, class: "level-link" }, level.ref);
      link.addEventListener("click", (event) => {
        event.preventDefault();
        void this.selectLevel(level.ref);
      });
      item.append(link, el("span", { class: "level-title" }, ` ${level.title}`));
      if (this.state.completed.has(level.ref)) {
        item.classList.add("completed");
        item.append(el("span", { class: "completion-mark", title: "completed" }, " ✓"));
      }
      list.append(item);
    }
    section.append(list);
    return section;
  }

  private renderLevel(info: LevelInfo): HTMLElement {
    const section = el("section", { id: "level-view", "data-ref": info.ref });
    const back = el("a", { id: "back-to-list", href: "#/" }, "← all levels");
    back.addEventListener("click", (event) => {
      event.preventDefault();
      this.backToList();
    });
    section.append(back);

    const heading = el("h2", { id: "level-title" }, info.title);
    if (this.state.completed.has(info.ref)) {
      heading.append(el("span", { class: "completion-mark", title: "completed" }, " ✓"));
    }
    section.append(heading);
    section.append(el("p", { id: "level-intro", class: "intro" }, info.intro));

    if (info.writeup) {
      const toggle = el("button", { id: "writeup-toggle", type: "button" },
        this.state.showWriteup ? "hide write-up" : "show write-up");
      toggle.addEventListener("click", () => {
        this.state.showWriteup = !this.state.showWriteup;
        this.render();
      });
      section.append(toggle);
      if (this.state.showWriteup) {
        section.append(el("pre", { id: "level-writeup", class: "writeup" }, info.writeup));
      }
    }

    section.append(this.renderHints());
    section.append(this.renderFlagForm());
    section.append(this.renderHistory());
    return section;
  }

  private renderHints(): HTMLElement {
    const hints = this.state.hints;
    const box = el("section", { id: "hints-view" });
    box.append(el("h3", {}, "Hints"));
    if (!hints) {
      box.append(el("p", {}, "hints unavailable"));
      return box;
    }
    box.append(el("span", { id: "hint-count" }, `${hints.revealed} / ${hints.total} revealed`));
    const list = el("ol", { id: "hint-list" });
    for (const hint of hints.hints) {
      const item = el("li", { class: "hint", "data-index": String(hint.index) });
      item.append(el("h4", {}, hint.title));
      item.append(el("pre", { class: "hint-body" }, hint.body));
      list.append(item);
    }
    box.append(list);
    const reveal = el("button", { id: "reveal-btn", type: "button" }, "reveal next hint");
    if (this.state.revealDisabled) {
      reveal.setAttribute("disabled", "disabled");
    }
    reveal.addEventListener("click", () => void this.revealNext());
    box.append(reveal);
    return box;
  }

  private renderFlagForm(): HTMLElement {
    const box = el("section", { id: "flag-view" });
    box.append(el("h3", {}, "Submit flag"));
    if (this.state.verdict) {
      box.append(
        el(
          "div",
          { id: "verdict-banner", class: `banner ${this.state.verdict}` },
          this.state.verdict === "correct" ? "correct — level complete!" : "incorrect",
        ),
      );
    }
    const form = el("form", { id: "flag-form" });
    const input = el("input", {
      id: "flag-input",
      name: "flag",
      placeholder: "CTF{...}",
      autocomplete: "off",
    });
    const submit = el("button", { id: "flag-submit", type: "submit" }, "submit");
    form.append(input, submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitFlag(input.value.trim());
    });
    box.append(form);
    return box;
  }

  private renderHistory(): HTMLElement {
    const box = el("section", { id: "submission-history" });
    const mine = this.state.submissions.filter((s) => s.level === this.state.selected);
    if (mine.length === 0) {
      return box;
    }
    box.append(el("h3", {}, "Submissions"));
    const list = el("ul");
    for (const sub of mine) {
      list.append(el("li", { class: `submission ${sub.verdict}` }, sub.verdict));
    }
    box.append(list);
    return box;
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  return String(err);
}
