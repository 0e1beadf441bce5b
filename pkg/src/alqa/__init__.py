"""Reference-free image quality scoring with pool-based active labeling.

Submodules:
    corpus        synthetic phantom volumes, artifacts, oracle labels, splits
    segmentation  two-phase level-set foreground extraction
    features      texture/intensity feature extractors and the manifest
    reduction     standardization + PCA projection
    svm           RBF soft-margin SVM (pairwise, probability-calibrated)
    mlp           feed-forward network trained with ADAM
    active        pool-based uncertainty-sampling loop and baselines
    evaluation    accuracy, ROC/AUC, rater fusion/agreement, significance
    server        HTTP labeling service
    cli           command-line entry point
"""

__version__ = "0.1.0"
