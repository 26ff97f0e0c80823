/** Exploration view: the annotation feed. Each card has a fixed layout —
 * author profile top-left, snapshot thumbnail top-right (click to enlarge
 * the full image fetched from the blob endpoint), the finding text below,
 * and vote/comment controls at the bottom. Tallies and lifecycle badges are
 * whatever the server last said — the client never recomputes them — and
 * every own mutation is followed by a refresh so the feedback is immediate.
 */

import type { ApiClient } from "./api.js";
import type {
  FeedCardJson,
  LifecycleState,
  Qualification,
} from "./model.js";

export interface FeedCardView {
  annotationId: string;
  regions: {
    topLeft: {
      displayName: string;
      userId: string;
      qualification: Qualification | null;
    };
    topRight: { thumbnailRef: string | null; enlargeable: boolean };
    body: string;
    bottom: {
      tally: { confirms: number; rejects: number };
      /** Voting is an expert-only capability; for analysts the control is
       * rendered disabled with an explanatory tooltip. */
      voteEnabled: boolean;
      voteTooltip: string | null;
      commentEnabled: boolean;
    };
  };
  state: LifecycleState;
  comments: { author: string; text: string }[];
  createdAt: string;
}

export function buildFeedCard(
  card: FeedCardJson,
  viewerQualification: Qualification,
): FeedCardView {
  const canVote = viewerQualification === "expert";
  return {
    annotationId: card.annotation_id,
    regions: {
      topLeft: {
        displayName: card.author.display_name,
        userId: card.author.user_id,
        qualification: card.author.qualification,
      },
      topRight: {
        thumbnailRef: card.thumbnail_ref,
        enlargeable: card.thumbnail_ref !== null,
      },
      body: card.body,
      bottom: {
        tally: card.tally,
        voteEnabled: canVote,
        voteTooltip: canVote ? null : "only experts can vote on annotations",
        commentEnabled: true,
      },
    },
    state: card.state,
    comments: card.comments.map((c) => ({ author: c.author, text: c.text })),
    createdAt: card.created_at,
  };
}

/** Group cards by their server-assigned state (the state filter control).
 * Exhaustive and disjoint by construction; order within groups preserved. */
export function separateByState(
  cards: FeedCardView[],
): Record<LifecycleState, FeedCardView[]> {
  const groups: Record<LifecycleState, FeedCardView[]> = {
    unvalidated: [],
    valid: [],
    invalid: [],
  };
  for (const card of cards) groups[card.state].push(card);
  return groups;
}

export class FeedController {
  cards: FeedCardView[] = [];
  stateFilter: LifecycleState | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly viewerQualification: Qualification,
    private readonly includeEdits = false,
  ) {}

  async refresh(): Promise<FeedCardView[]> {
    const raw = await this.api.getFeed(this.includeEdits);
    this.cards = raw.map((card) =>
      buildFeedCard(card, this.viewerQualification),
    );
    return this.visibleCards();
  }

  visibleCards(): FeedCardView[] {
    if (this.stateFilter === null) return this.cards;
    return separateByState(this.cards)[this.stateFilter];
  }

  /** Vote on a finding card, then re-pull the feed so the tally and badge
   * reflect the acknowledged server state. */
  async vote(
    annotationId: string,
    verdict: "confirm" | "reject",
  ): Promise<FeedCardView> {
    if (this.viewerQualification !== "expert") {
      throw new Error("vote control is disabled for analysts");
    }
    await this.api.voteFinding(annotationId, verdict);
    await this.refresh();
    const card = this.cards.find((c) => c.annotationId === annotationId);
    if (!card) throw new Error(`card ${annotationId} missing after vote`);
    return card;
  }

  async comment(annotationId: string, text: string): Promise<FeedCardView> {
    await this.api.postComment(annotationId, text);
    await this.refresh();
    const card = this.cards.find((c) => c.annotationId === annotationId);
    if (!card) throw new Error(`card ${annotationId} missing after comment`);
    return card;
  }

  /** Thumbnail click: fetch the full-size snapshot for the lightbox. */
  async enlarge(card: FeedCardView): Promise<Uint8Array> {
    const ref = card.regions.topRight.thumbnailRef;
    if (ref === null) throw new Error("card has no snapshot to enlarge");
    return this.api.getBlob(ref);
  }
}
