/** Session page controller: a small state machine over server responses. */

import { ApiError, SessionApi } from "./api.js";
import type { PosteriorResponse, SessionView } from "./api.js";
import {
  renderCompletion,
  renderDesignCard,
  renderErrorBanner,
  renderGainTrace,
  renderHistory,
  renderOutcomeForm,
  renderPosteriorScatter,
  showInlineError,
} from "./view.js";

export interface StartOptions {
  model: string;
  checkpoint: string;
  mode: "live" | "simulated";
  seed: number;
  nParticles: number;
  posteriorPoints?: number;
}

export class SessionController {
  sessionId: string | null = null;
  view: SessionView | null = null;
  posterior: PosteriorResponse | null = null;

  constructor(
    readonly api: SessionApi,
    readonly root: HTMLElement,
  ) {}

  /** Create a session and render the first design card. */
  async start(opts: StartOptions): Promise<void> {
    try {
      const created = await this.api.createSession({
        model: opts.model,
        checkpoint: opts.checkpoint,
        mode: opts.mode,
        seed: opts.seed,
        n_particles: opts.nParticles,
      });
      this.sessionId = created.session_id;
      this.posteriorPoints = opts.posteriorPoints;
      await this.refresh();
    } catch (err) {
      this.renderError(err, () => void this.start(opts));
    }
  }

  private posteriorPoints: number | undefined;

  /** Re-fetch the authoritative view (also used to restore after reload). */
  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    this.view = await this.api.sessionView(this.sessionId);
    try {
      this.posterior = await this.api.posterior(this.sessionId, this.posteriorPoints);
    } catch (err) {
      // a degenerate posterior (503) leaves the last good scatter in place
      if (!(err instanceof ApiError && err.status === 503)) throw err;
    }
    this.render();
  }

  async submitOutcome(y?: number): Promise<void> {
    if (!this.sessionId) return;
    try {
      await this.api.postOutcome(this.sessionId, y);
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        const form = this.root.querySelector<HTMLElement>("form.outcome-form");
        if (form) showInlineError(form, `${err.message}${err.detail ? ` (${err.detail})` : ""}`);
        return;
      }
      this.renderError(err, () => void this.refresh());
      return;
    }
    await this.refresh();
  }

  render(): void {
    const view = this.view;
    if (!view) return;
    this.root.replaceChildren();
    if (view.done) {
      this.root.append(renderCompletion(view));
    } else {
      this.root.append(renderDesignCard(view));
      this.root.append(
        renderOutcomeForm(view, {
          onSubmit: (y) => void this.submitOutcome(y),
          onSimulate:
            view.mode === "simulated" ? () => void this.submitOutcome() : undefined,
        }),
      );
    }
    this.root.append(renderHistory(view));
    if (this.posterior) {
      this.root.append(renderPosteriorScatter(view.model, this.posterior));
    }
    if (view.mode === "simulated" && view.gain_trace && view.gain_trace.length) {
      this.root.append(renderGainTrace(view.gain_trace));
    }
  }

  private renderError(err: unknown, retry: () => void): void {
    const message = err instanceof Error ? err.message : String(err);
    this.root.replaceChildren(renderErrorBanner(message, retry));
  }
}

/** Entry point for the browser page. */
export async function mount(root: HTMLElement, baseUrl = ""): Promise<void> {
  const api = new SessionApi(baseUrl);
  const controller = new SessionController(api, root);
  const form = document.querySelector<HTMLFormElement>("#start-form");
  const select = document.querySelector<HTMLSelectElement>("#checkpoint-select");
  if (select) {
    try {
      const catalog = await api.checkpoints();
      for (const ck of catalog.checkpoints) {
        if (ck.status !== "ok") continue;
        const opt = document.createElement("option");
        opt.value = ck.id;
        opt.dataset.model = ck.model ?? "";
        opt.textContent = `${ck.id} (${ck.model})`;
        select.append(opt);
      }
    } catch (err) {
      root.replaceChildren(
        renderErrorBanner(err instanceof Error ? err.message : String(err), () =>
          void mount(root, baseUrl),
        ),
      );
      return;
    }
  }
  form?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    const checkpoint = String(data.get("checkpoint") ?? "");
    const model =
      select?.selectedOptions[0]?.dataset.model ?? String(data.get("model") ?? "");
    void controller.start({
      model,
      checkpoint,
      mode: (data.get("mode") as "live" | "simulated") ?? "simulated",
      seed: Number(data.get("seed") ?? 0),
      nParticles: Number(data.get("n_particles") ?? 1000),
    });
  });
}
