/**
 * Minimal browser shell around the task state machine: renders one task
 * screen at a time into #app and walks the session plan.
 */

import { ApiClient, ApiError } from "./api.js";
import { SessionRunner, TaskScreen, buildSessionPlan } from "./session.js";

const DEFAULT_TARGETS = [
  "the desk was great.",
  "I will be 10 minutes late.",
  "the food was absolutely wonderful.",
  "the red chair arrived this morning.",
  "service was quick and friendly.",
  "the lamp on the desk is broken.",
  "my order was wrong again.",
  "the meeting moved to the small room.",
  "this keyboard feels really cheap.",
  "the coffee here is always cold.",
];

export function startApp(
  root: HTMLElement,
  baseUrl: string = "",
  targets: string[] = DEFAULT_TARGETS,
): void {
  const api = new ApiClient(baseUrl);
  const runner = new SessionRunner(
    buildSessionPlan(targets),
    api,
    `session-${Date.now().toString(36)}`,
  );
  showNext(root, runner);
}

function showNext(root: HTMLElement, runner: SessionRunner): void {
  if (runner.finished) {
    root.innerHTML = "<h2>Session complete</h2><p>All tasks logged. Thank you.</p>";
    return;
  }
  render(root, runner, runner.nextScreen());
}

function render(root: HTMLElement, runner: SessionRunner, screen: TaskScreen): void {
  root.innerHTML = "";
  const h = root.appendChild(document.createElement("h2"));
  h.textContent = screen.task.kind === "autocomplete" ? "Keyword task" : "Writing task";
  const target = root.appendChild(document.createElement("p"));
  target.textContent = `Target: ${screen.task.target}`;
  const hint = root.appendChild(document.createElement("p"));
  hint.textContent =
    screen.task.kind === "autocomplete"
      ? "Type keywords that convey the sentence, then submit to see suggestions."
      : "Type the sentence verbatim or a sentence that preserves its meaning.";

  if (screen.phase === "typing") {
    const input = root.appendChild(document.createElement("input"));
    input.type = "text";
    input.value = screen.input;
    input.addEventListener("input", () => {
      screen.type(input.value);
      submit.disabled = !screen.canSubmit;
    });
    const submit = root.appendChild(document.createElement("button"));
    submit.textContent = "Submit";
    submit.disabled = !screen.canSubmit;
    submit.addEventListener("click", () => {
      void screen
        .submit()
        .then(() => {
          if (screen.phase === "done") runner.advance(screen);
          if (runner.finished || screen.phase === "done") showNext(root, runner);
          else render(root, runner, screen);
        })
        .catch((err) => renderError(root, runner, screen, err));
    });
    input.focus();
    return;
  }

  // reviewing: suggestions with equivalence checkboxes
  const list = root.appendChild(document.createElement("ol"));
  (screen.suggestions ?? []).forEach((s, i) => {
    const li = list.appendChild(document.createElement("li"));
    const box = li.appendChild(document.createElement("input"));
    box.type = "checkbox";
    box.checked = screen.marks[i];
    box.addEventListener("change", () => screen.toggleMark(i));
    li.appendChild(document.createTextNode(` ${s.sentence}`));
  });
  if (screen.canRevise) {
    const revise = root.appendChild(document.createElement("button"));
    revise.textContent = "Revise keywords";
    revise.addEventListener("click", () => {
      screen.revise();
      render(root, runner, screen);
    });
  }
  const confirm = root.appendChild(document.createElement("button"));
  confirm.textContent = "Confirm marks";
  confirm.addEventListener("click", () => {
    void screen
      .confirm()
      .then(() => {
        runner.advance(screen);
        showNext(root, runner);
      })
      .catch((err) => renderError(root, runner, screen, err));
  });
}

function renderError(
  root: HTMLElement,
  runner: SessionRunner,
  screen: TaskScreen,
  err: unknown,
): void {
  const note = root.appendChild(document.createElement("p"));
  const retryable = err instanceof ApiError && err.retryable;
  note.textContent = retryable
    ? "The service is unreachable. Your input is preserved — retry when ready."
    : `Request failed: ${String(err)}`;
  const retry = root.appendChild(document.createElement("button"));
  retry.textContent = "Retry";
  retry.addEventListener("click", () => {
    void screen
      .retry()
      .then(() => {
        if (screen.phase === "done") {
          runner.advance(screen);
          showNext(root, runner);
        } else {
          render(root, runner, screen);
        }
      })
      .catch((e) => renderError(root, runner, screen, e));
  });
}
