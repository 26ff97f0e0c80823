/** The editing dialog: collects a new value and a mandatory rationale for
 * a chosen scope, refuses to submit until both are present, and reports the
 * scope-matching glyph for the affected cells on success. Server-side
 * validation errors surface inline instead of crashing the view.
 */

import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import type {
  EditJson,
  GlyphKind,
  LifecycleState,
  ScalarJson,
  ScopeJson,
} from "./model.js";
import { glyphForScope } from "./model.js";

export interface EditSubmission {
  annotation: EditJson;
  state: LifecycleState;
  glyph: GlyphKind;
}

export class EditDialog {
  private scope: ScopeJson | null = null;
  private newValue: ScalarJson | null = null;
  private rationale = "";
  /** Inline validation messages; empty means ready to submit. */
  errors: string[] = [];
  submitting = false;

  constructor(private readonly api: ApiClient) {}

  open(scope: ScopeJson): void {
    this.scope = scope;
    this.newValue = null;
    this.rationale = "";
    this.errors = [];
  }

  get isOpen(): boolean {
    return this.scope !== null;
  }

  setValue(value: ScalarJson): void {
    this.newValue = value;
  }

  setRationale(text: string): void {
    this.rationale = text;
  }

  /** Local checks mirroring the server's edit invariants, so an obviously
   * incomplete dialog never produces a request at all. */
  validate(): string[] {
    const errors: string[] = [];
    if (this.scope === null) errors.push("no scope selected");
    if (this.newValue === null) errors.push("a new value is required");
    if (this.rationale.trim() === "")
      errors.push("a rationale is required for manual edits");
    this.errors = errors;
    return errors;
  }

  /** Submit if valid; returns null (with `errors` set) when blocked, either
   * locally or by a server-side validation response. */
  async submit(): Promise<EditSubmission | null> {
    if (this.validate().length > 0) return null;
    const scope = this.scope as ScopeJson;
    const value = this.newValue as ScalarJson;
    this.submitting = true;
    try {
      const result = await this.api.postEdit({
        scope,
        new_value: value,
        rationale: this.rationale.trim(),
      });
      this.scope = null; // close on success
      return {
        annotation: result.annotation,
        state: result.state,
        glyph: glyphForScope(result.annotation.scope),
      };
    } catch (error) {
      if (error instanceof ApiError && error.status < 500) {
        this.errors = [error.message];
        return null;
      }
      throw error;
    } finally {
      this.submitting = false;
    }
  }
}
