"""Optional SVG figures drawn from the CSV artifacts."""

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

LABEL_GROUPS = ((1, 'non-default', 'tab:blue'),
                (0, 'default', 'tab:red'),
                (-1, 'unapproved', 'tab:gray'))


def _save(figure, path: str) -> str:
    figure.tight_layout()
    figure.savefig(path, format='svg')
    plt.close(figure)
    return path


def plot_pca(pca: pd.DataFrame, path: str, title: str = None) -> str:
    """Scatter of pc1/pc2 coloured by non-default, default and unapproved."""
    figure, axes = plt.subplots(figsize=(6, 5))
    for label, name, colour in LABEL_GROUPS:
        group = pca[pca['label'] == label]
        if not group.empty:
            axes.scatter(group['pc1'], group['pc2'], s=4, alpha=0.5,
                         color=colour, label=name)
    axes.set_xlabel('pc1')
    axes.set_ylabel('pc2')
    if title:
        axes.set_title(title)
    axes.legend(markerscale=3)
    return _save(figure, path)


def plot_align_uniform(metrics: pd.DataFrame, path: str) -> str:
    """Alignment against uniformity per run, coloured by AUC."""
    figure, axes = plt.subplots(figsize=(6, 5))
    points = axes.scatter(metrics['alignment'], metrics['uniformity'],
                          c=metrics['aucroc'], cmap='viridis')
    for _, row in metrics.iterrows():
        axes.annotate(f"{row['variant']}/{row['seed']}",
                      (row['alignment'], row['uniformity']), fontsize=7)
    axes.set_xlabel('alignment')
    axes.set_ylabel('uniformity')
    figure.colorbar(points, ax=axes, label='AUC')
    return _save(figure, path)


def plot_length_bins(bins: pd.DataFrame, path: str) -> str:
    """Seed-mean AUC delta per sequence-length bin."""
    means = bins.groupby(['bin_index', 'bin'])['delta'].mean().reset_index()
    figure, axes = plt.subplots(figsize=(6, 4))
    axes.bar(means['bin'], means['delta'], color='tab:blue')
    axes.axhline(0.0, color='black', linewidth=0.8)
    axes.set_xlabel('sequence length')
    axes.set_ylabel('AUC improvement')
    return _save(figure, path)


def plot_label_ratio(metrics: pd.DataFrame, path: str) -> str:
    """Seed-mean AUC and profit against the revealed label ratio."""
    means = metrics.groupby(['transductive', 'label_ratio'])[
        ['aucroc', 'profit']].mean().reset_index()
    figure, (auc_axes, profit_axes) = plt.subplots(1, 2, figsize=(10, 4))
    for transductive, group in means.groupby('transductive'):
        name = 'transductive' if transductive else 'base'
        auc_axes.plot(group['label_ratio'], group['aucroc'], marker='o',
                      label=name)
        profit_axes.plot(group['label_ratio'], group['profit'], marker='o',
                         label=name)
    auc_axes.set_xlabel('labeled test ratio')
    auc_axes.set_ylabel('AUC')
    profit_axes.set_xlabel('labeled test ratio')
    profit_axes.set_ylabel('profit')
    auc_axes.legend()
    return _save(figure, path)
