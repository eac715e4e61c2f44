"""
Emotion-aware and emotion-adapted generators
============================================

Compare plain CSG with CSG-Emo-Aware (soft label as input) and CSG-Emo-Adapted
(per-emotion fine-tuning with the first generator layer frozen). A linear SVM
on sentence functionals, trained on real motion, scores the generated motion.
"""

from dataclasses import replace

import numpy as np

from csglip.dataset import EMOTIONS, TARGET_EMOTIONS, SynthSpec, boxsmooth, generate_synthetic, split_corpus
from csglip.evalstat import classification_metrics, functionals, train_classifier
from csglip.synth import SynthesisRequest, synthesize
from csglip.train import ScheduleSpec, adapt_all_emotions, train_csg

sched = ScheduleSpec(pretrain_g_epochs=40, pretrain_d_epochs=20, adversarial_epochs=5, batch=64, hop=20,
                     lr=3e-3, adv_lr=3e-5, g_hidden=16, d_hidden=12)
adapt = replace(sched, hop=10, adapt_epochs=15, adapt_d_epochs=10, adapt_lr=3e-4)
corpus = generate_synthetic(SynthSpec())
tr, va, te = split_corpus(list(corpus), seed=0)

csg = train_csg(tr, va, sched, seed=0)
aware = train_csg(tr, va, sched, seed=0, emotion_aware=True)
adapted = adapt_all_emotions(csg, tr, adapt, seed=0)


def gen(ck, u, k, emotion=None):
    return synthesize(SynthesisRequest(ck, u.features, noise_seed=k, emotion=emotion)).frames


clf = train_classifier(np.stack([functionals(u.motion) for u in tr]), [u.emotion.hard for u in tr],
                       np.stack([functionals(u.motion) for u in va]), [u.emotion.hard for u in va])
truth = [u.emotion.hard for u in te]
outputs = {
    "real": [u.motion.frames for u in te],
    "CSG": [gen(csg, u, k) for k, u in enumerate(te)],
    "CSG-Emo-Aware": [gen(aware, u, k, u.emotion.soft) for k, u in enumerate(te)],
    "CSG-Emo-Adapted": [gen(adapted[u.emotion.hard], u, k) for k, u in enumerate(te)],
}
for name, seqs in outputs.items():
    m = classification_metrics(truth, clf.predict(np.stack([functionals(s) for s in seqs])), TARGET_EMOTIONS)
    print(f"{name:16s} macro-F1 {100 * m['f1']:5.1f}  accuracy {100 * m['accuracy']:5.1f}")

# adaptation should move the mean pose offset toward each emotion's gain row
def offset(ck):
    return np.mean([np.mean(gen(ck, u, k) - boxsmooth(u.features.frames, 4) @ corpus.oracle.mixing.T, 0)
                    for k, u in enumerate(te)], axis=0)


base = offset(csg)
for e, ck in adapted.items():
    g = corpus.oracle.gains[EMOTIONS.index(e)]
    print(f"{e:12s} distance to gain row: base {np.linalg.norm(base - g):.2f}, "
          f"adapted {np.linalg.norm(offset(ck) - g):.2f}")
