"""Fixture records with fixed field values for golden-file rendering."""

from cogen.corpus import CorpusRecord

CONTEXT_RECORD = CorpusRecord(
    user_id="golden-user",
    dataset_kind="context_aware",
    profile="Freelance photographer who favors concise sentences and vivid color words.",
    history=(
        "Yesterday's shoot ran long but the light was worth every minute.",
        "Posted a short guide on choosing lenses for winter landscapes.",
    ),
    task="Write a blog post announcing the spring workshop schedule.",
    reference="The spring workshops are open for signup, and the golden hour sessions fill fast.",
    general_task="Write a blog post announcing a workshop schedule.",
)

EMAIL_RECORD = CorpusRecord(
    user_id="golden-email",
    dataset_kind="email",
    profile="",
    history=(
        "Hi team, attaching the revised figures for the deck. Same caveats as before.",
        "Quick reminder that the vendor call moved to Thursday at ten.",
    ),
    task="Quarterly planning kickoff",
    reference="Hello all, the planning kickoff is scheduled for Monday morning; agenda to follow.",
    general_task="Quarterly planning kickoff",
)

PAPER_RECORD = CorpusRecord(
    user_id="golden-paper",
    dataset_kind="paper",
    profile="",
    history=(
        "We study sparse recovery under correlated noise and derive sharp bounds.",
        "This work introduces a streaming sketch for heavy-hitter detection.",
    ),
    task="Adaptive Mesh Refinement for Coastal Flood Models",
    reference="We present an adaptive mesh refinement scheme for coastal flood forecasting.",
    general_task="Adaptive Mesh Refinement for Coastal Flood Models",
)

JUDGE_ANSWER = "Spring workshops open next week with three golden hour sessions along the pier."
