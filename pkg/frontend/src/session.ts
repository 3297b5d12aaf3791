/**
 * Study-session state machine: alternating autocomplete and writing tasks
 * with first-keystroke-to-submit timing, suggestion equivalence marking,
 * and durable logging through the service API.
 */

import { ApiClient, ApiError, SessionRecord, Suggestion, TaskKind } from "./api.js";

export interface Task {
  kind: TaskKind;
  target: string;
}

/** Strictly alternating task plan over the given targets. */
export function buildSessionPlan(targets: string[], firstKind: TaskKind = "autocomplete"): Task[] {
  const other: TaskKind = firstKind === "autocomplete" ? "writing" : "autocomplete";
  return targets.map((target, i) => ({ kind: i % 2 === 0 ? firstKind : other, target }));
}

export type Phase =
  | "typing" // input buffer open, timer runs from first keystroke
  | "reviewing" // autocomplete only: suggestions shown, marks editable
  | "done"; // record logged server-side

export interface JournalEntry {
  event: "first_keystroke" | "submit" | "revision" | "confirmed" | "error";
  at: number;
  detail?: string;
}

export interface Clock {
  (): number; // seconds, monotonic preferred
}

/**
 * One task screen. Invariants:
 *  - the timer starts at the first keystroke and stops at submit;
 *  - submit is disabled while the input buffer is empty;
 *  - suggestions appear only after keywords are submitted, never live;
 *  - at most one keyword-revision round, logged distinctly in the journal;
 *  - a failed network call preserves the input and allows retry — a task is
 *    never silently skipped.
 */
export class TaskScreen {
  readonly task: Task;
  input = "";
  suggestions: Suggestion[] | null = null;
  marks: boolean[] = [];
  readonly journal: JournalEntry[] = [];
  lastError: ApiError | null = null;

  private phase_: Phase = "typing";
  private startedAt: number | null = null;
  private submittedAt: number | null = null;
  private revisionsUsed = 0;

  constructor(
    task: Task,
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private readonly clock: Clock = () => Date.now() / 1000,
  ) {
    this.task = task;
  }

  get phase(): Phase {
    return this.phase_;
  }

  get canSubmit(): boolean {
    return this.phase_ === "typing" && this.input.length > 0;
  }

  get canRevise(): boolean {
    return this.phase_ === "reviewing" && this.revisionsUsed === 0;
  }

  get elapsedSeconds(): number | null {
    if (this.startedAt === null || this.submittedAt === null) return null;
    return this.submittedAt - this.startedAt;
  }

  /** Replace the input buffer; the first non-empty edit starts the timer. */
  type(text: string): void {
    if (this.phase_ !== "typing") throw new Error(`cannot type in phase ${this.phase_}`);
    if (this.startedAt === null && text.length > 0) {
      this.startedAt = this.clock();
      this.journal.push({ event: "first_keystroke", at: this.startedAt });
    }
    this.input = text;
  }

  /**
   * Submit the buffer. Autocomplete tasks fetch top-3 suggestions and move to
   * review; writing tasks log their record immediately.
   */
  async submit(): Promise<void> {
    if (!this.canSubmit) throw new Error("submit disabled: empty input or wrong phase");
    this.submittedAt = this.clock();
    this.journal.push({ event: "submit", at: this.submittedAt, detail: this.input });
    if (this.task.kind === "autocomplete") {
      await this.fetchSuggestions();
    } else {
      await this.logRecord(null);
    }
  }

  /** Toggle the equivalence checkbox for one shown suggestion. */
  toggleMark(index: number): void {
    if (this.phase_ !== "reviewing") throw new Error("no suggestions on screen");
    if (index < 0 || index >= this.marks.length) throw new Error(`no suggestion ${index}`);
    this.marks[index] = !this.marks[index];
  }

  /** Reopen the keyword buffer for the single allowed revision round. */
  revise(): void {
    if (!this.canRevise) throw new Error("revision unavailable");
    this.revisionsUsed = 1;
    this.journal.push({ event: "revision", at: this.clock(), detail: this.input });
    this.suggestions = null;
    this.marks = [];
    this.submittedAt = null; // the timer stops at the *final* submit
    this.phase_ = "typing";
  }

  /** Log the reviewed autocomplete record with its equivalence marks. */
  async confirm(): Promise<void> {
    if (this.phase_ !== "reviewing") throw new Error("nothing to confirm");
    await this.logRecord(this.marks);
  }

  /** Retry the last failed network call with the input intact. */
  async retry(): Promise<void> {
    if (this.lastError === null) throw new Error("nothing to retry");
    if (this.phase_ === "typing") {
      if (this.task.kind === "autocomplete") await this.fetchSuggestions();
      else await this.logRecord(null);
    } else {
      await this.logRecord(this.marks);
    }
  }

  private async fetchSuggestions(): Promise<void> {
    try {
      const resp = await this.api.complete(this.input, 3);
      this.lastError = null;
      this.suggestions = resp.suggestions;
      this.marks = resp.suggestions.map(() => false);
      this.phase_ = "reviewing";
    } catch (err) {
      this.recordError(err);
      throw err;
    }
  }

  private async logRecord(marks: boolean[] | null): Promise<void> {
    const record: SessionRecord = {
      session_id: this.sessionId,
      task_kind: this.task.kind,
      target: this.task.target,
      user_input: this.input,
      suggestions_shown: (this.suggestions ?? []).map((s) => s.sentence),
      elapsed_seconds: this.elapsedSeconds ?? 0,
      timestamp: this.clock(),
    };
    if (marks !== null) record.equivalence_marks = marks;
    try {
      await this.api.logSession(record);
      this.lastError = null;
      this.journal.push({ event: "confirmed", at: this.clock() });
      this.phase_ = "done";
    } catch (err) {
      this.recordError(err);
      throw err;
    }
  }

  private recordError(err: unknown): void {
    this.lastError = err instanceof ApiError ? err : new ApiError(String(err), null, false);
    this.journal.push({ event: "error", at: this.clock(), detail: this.lastError.message });
  }
}

/** Walk a plan screen by screen; the caller drives each screen to "done". */
export class SessionRunner {
  private index = 0;

  constructor(
    readonly plan: Task[],
    private readonly api: ApiClient,
    readonly sessionId: string,
    private readonly clock: Clock = () => Date.now() / 1000,
  ) {
    if (plan.length === 0) throw new Error("empty session plan");
  }

  get finished(): boolean {
    return this.index >= this.plan.length;
  }

  /** The screen for the current task; call again after it reaches "done". */
  nextScreen(): TaskScreen {
    if (this.finished) throw new Error("session complete");
    return new TaskScreen(this.plan[this.index], this.api, this.sessionId, this.clock);
  }

  /** Advance past the current task; only valid once its record is logged. */
  advance(screen: TaskScreen): void {
    if (screen.phase !== "done") throw new Error("current task not yet logged");
    this.index += 1;
  }
}
