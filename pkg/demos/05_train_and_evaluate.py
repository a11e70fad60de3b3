"""End to end at desk scale: synthesize, train briefly, evaluate, decode.

Uses a small dataset and a short schedule so it finishes in a few minutes on
a laptop; bump the counts for a real run (see README for the CLI variant).
"""

import numpy as np

from markgrid import (
    ChannelConfig,
    GridUNet,
    TrainConfig,
    is_cfmt,
    paper_like_composition,
    predict_label,
    solve_policy,
    synthesize_samples,
    to_student_id,
    train,
)
from markgrid.train import eval_model, history_log, preprocess


def synthesize(n, seed):
    records = synthesize_samples(n, paper_like_composition(n), seed=seed, dtype=np.uint8)
    return [(r.image, r.label) for r in records]


train_set = synthesize(300, seed=11)
val_set = synthesize(80, seed=22)

model = GridUNet(ChannelConfig((16, 16, 32, 64), 8), seed=0)
config = TrainConfig(epochs=12, batch_size=32, seed=0)
policy = solve_policy(config.p_org, config.factors)
model, history = train(model, train_set, val_set=val_set, config=config, policy=policy)
print(history_log(history))

inputs = np.stack([preprocess(img) for img, _ in val_set])
report = eval_model(model, inputs, [lab for _, lab in val_set])
print(f"validation: acc={report.acc:.3f} alpha={report.alpha_rate:.3f} "
      f"beta={report.beta_rate:.3f} (n={report.n})")

# Decode a few validation sheets the way the predict command does.
for image, label in val_set[:5]:
    grid = model.forward(preprocess(image)[None])[0]
    decoded = predict_label(grid)
    verdict = to_student_id(decoded) if is_cfmt(decoded) else "-> manual review"
    print(f"truth {str(label):>24s}   predicted {verdict}")
