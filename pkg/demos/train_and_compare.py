"""Multinomial vs one-vs-all on the four-class traffic surrogate.

Mirrors the sampled KDD task: 4000 training and 5000 test records with a
heavy smurf class and a small "others" class.  The surrogate is Gaussian
with a shared covariance, so its Bayes error is the floor any linear model
can hope for.

    python demos/train_and_compare.py
"""

from hoids.evaluation import confusion, error_rate
from hoids.model import train
from hoids.synthetic import kdd_sampled_surrogate

train_ds, test_ds, surrogate = kdd_sampled_surrogate(seed=0)
bayes = error_rate(test_ds.y, surrogate.bayes_predict(test_ds.X))
print(f"train {train_ds.n} rows, test {test_ds.n} rows, {train_ds.m} features")
print(f"Bayes-optimal test error: {bayes:.4f}\n")

for mode in ("multi", "ova"):
    model, *traces = train(train_ds, mode)
    e_in = error_rate(train_ds.y, model.predict(train_ds.X))
    pred = model.predict(test_ds.X)
    print(f"{mode}: E_in {e_in:.4f}  E_out {error_rate(test_ds.y, pred):.4f}")
    print(confusion(test_ds.y, pred, test_ds.labels).format(), end="\n\n")
