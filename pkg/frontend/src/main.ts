import { ApiClient } from "./api.js";
import { cloudModel, EMPTY_MESSAGE_PLACEHOLDER } from "./cloud.js";
import { SessionMachine } from "./session.js";
import type { SessionReport } from "./types.js";

declare global {
  interface Window {
    /** Optional service origin when the static files are hosted elsewhere;
     * defaults to same-origin. */
    API_BASE?: string;
  }
}

const api = new ApiClient(window.API_BASE ?? "");

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

async function renderPicker(root: HTMLElement): Promise<void> {
  const { sessions } = await api.sessions();
  root.replaceChildren(el("h1", "", "Annotation sessions"));
  const list = el("ul", "session-list");
  for (const s of sessions) {
    const item = el("li");
    const link = el("a", "", `${s.session_id}`);
    link.href = `?session=${encodeURIComponent(s.session_id)}`;
    item.append(
      link,
      el(
        "span",
        "session-progress",
        ` — ${s.n_answered}/${s.n_items} answered${s.complete ? " (complete)" : ""}`,
      ),
    );
    list.append(item);
  }
  root.append(list);
}

function renderReport(root: HTMLElement, report: SessionReport): void {
  const pct = (x: number | null) =>
    x === null ? "n/a" : `${(100 * x).toFixed(2)}%`;
  root.replaceChildren(
    el("h1", "", "Session report"),
    el("p", "", `${report.n_items} items, session ${report.session_id}`),
  );
  const rows: [string, string][] = [
    ["Agreement with the model (CSR_H)", pct(report.csr_h)],
    ["Agreement with the true labels (ACC_H)", pct(report.acc_h)],
    ["Marked unsure", pct(report.unsure_fraction)],
    ["CSR_H, sure answers only", pct(report.csr_h_sure_only)],
    ["ACC_H, sure answers only", pct(report.acc_h_sure_only)],
  ];
  const table = el("table", "report");
  for (const [name, value] of rows) {
    const tr = el("tr");
    tr.append(el("td", "", name), el("td", "metric", value));
    table.append(tr);
  }
  root.append(table);
}

function renderSession(root: HTMLElement, machine: SessionMachine): void {
  let selectedLabel: number | null = null;
  let unsure = false;
  let sendError: string | null = null;

  const draw = () => {
    const view = machine.view();

    if (view.phase === "complete") {
      const button = el("button", "primary", "View session report");
      button.onclick = async () => {
        try {
          renderReport(root, await api.report(machine.sessionId));
        } catch (err) {
          root.append(el("p", "error", `could not load report: ${err}`));
        }
      };
      root.replaceChildren(
        el("h1", "", "Session complete"),
        el(
          "p",
          "",
          "Thank you — every item has been answered. Individual answers are final.",
        ),
        button,
      );
      return;
    }

    const item = view.item;
    if (item === null) return; // unreachable while incomplete

    root.replaceChildren(
      el(
        "p",
        "progress",
        `Item ${view.answeredCount + 1} of ${view.total}`,
      ),
    );

    const cloud = el("div", "cloud");
    const model = cloudModel(item.tokens, item.item_id);
    if (model.placeholder) {
      cloud.append(el("span", "placeholder", EMPTY_MESSAGE_PLACEHOLDER));
    } else {
      for (const word of model.words) {
        const chip = el("span", "cloud-word", word.text);
        chip.style.transform = `translate(${word.dx}px, ${word.dy}px) rotate(${word.rot}deg)`;
        cloud.append(chip);
      }
    }
    root.append(cloud);

    if (item.hypothesis !== null) {
      root.append(el("p", "hypothesis", item.hypothesis));
    }

    const awaitingRetry = view.phase === "retry";

    const labels = el("div", "labels");
    view.labelNames.forEach((name, index) => {
      const button = el(
        "button",
        `label${selectedLabel === index ? " selected" : ""}`,
        name,
      );
      button.disabled = awaitingRetry;
      button.onclick = () => {
        selectedLabel = index;
        draw();
      };
      labels.append(button);
    });
    root.append(labels);

    const unsureRow = el("label", "unsure-row");
    const checkbox = el("input");
    checkbox.type = "checkbox";
    checkbox.checked = unsure;
    checkbox.disabled = awaitingRetry;
    checkbox.onchange = () => {
      unsure = checkbox.checked;
    };
    unsureRow.append(checkbox, el("span", "", " I am not sure"));
    root.append(unsureRow);

    const actions = el("div", "actions");
    if (awaitingRetry) {
      root.append(
        el(
          "p",
          "error",
          `Answer not acknowledged yet${sendError ? ` (${sendError})` : ""}. ` +
            "It is saved locally; retry to send it again.",
        ),
      );
      const retry = el("button", "primary", "Retry");
      retry.onclick = async () => {
        try {
          await machine.retry();
          sendError = null;
          selectedLabel = null;
          unsure = false;
        } catch (err) {
          sendError = String(err);
        }
        draw();
      };
      actions.append(retry);
    } else {
      const submit = el("button", "primary", "Submit answer");
      submit.disabled = selectedLabel === null || view.phase === "sending";
      submit.onclick = async () => {
        if (selectedLabel === null) return;
        try {
          await machine.submit(selectedLabel, unsure);
          sendError = null;
          selectedLabel = null;
          unsure = false;
        } catch (err) {
          sendError = String(err);
        }
        draw();
      };
      actions.append(submit);
    }
    root.append(actions);
  };

  draw();
}

async function main(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const sessionId = new URLSearchParams(location.search).get("session");
  try {
    if (sessionId === null) {
      await renderPicker(root);
    } else {
      renderSession(root, new SessionMachine(api, await api.session(sessionId)));
    }
  } catch (err) {
    root.replaceChildren(el("p", "error", `failed to load: ${err}`));
  }
}

void main();
