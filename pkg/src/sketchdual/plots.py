"""SVG charts for experiment reports: training curves and a confusion heat grid."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no date stamp so identical reports give identical files
_RC = {"svg.hashsalt": "sketchdual", "svg.fonttype": "none"}
_META = {"Date": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_curves(trace, path):
    epochs = [r["epoch"] for r in trace]
    with plt.rc_context(_RC):
        fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(9, 3.5))
        ax_l.plot(epochs, [r["train_loss"] for r in trace], label="train")
        ax_l.plot(epochs, [r["val_loss"] for r in trace], label="validation")
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("loss")
        ax_l.legend()
        ax_a.plot(epochs, [r["train_acc"] for r in trace], label="train")
        ax_a.plot(epochs, [r["val_acc"] for r in trace], label="validation")
        ax_a.set_xlabel("epoch")
        ax_a.set_ylabel("accuracy")
        ax_a.set_ylim(0, 1.02)
        ax_a.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_confusion(confusion, classes, path):
    cm = np.asarray(confusion)
    with plt.rc_context(_RC):
        size = 2.5 + 0.45 * len(classes)
        fig, ax = plt.subplots(figsize=(size, size))
        ax.imshow(cm, cmap="Blues")
        ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right")
        ax.set_yticks(range(len(classes)), classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        top = cm.max() if cm.size else 0
        for i in range(cm.shape[0]):
            for j in range(cm.shape[1]):
                ax.text(j, i, str(cm[i, j]), ha="center", va="center", color="white" if cm[i, j] > top / 2 else "black")
        fig.tight_layout()
        _save(fig, path)


def write_plots(report, out_dir):
    """``curves.svg`` and ``confusion.svg`` in ``out_dir``; returns their paths."""
    curves = os.path.join(out_dir, "curves.svg")
    conf = os.path.join(out_dir, "confusion.svg")
    plot_curves(report.trace, curves)
    plot_confusion(report.confusion, report.classes, conf)
    return curves, conf
