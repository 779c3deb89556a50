"""GMM-based conditional-mean channel estimation and baselines."""
from .channel_model import (
    ClusterParams,
    ModelConfig,
    cluster_covariance,
    draw_cluster_params,
    generate_dataset,
    laplace_power_density,
    steering_vector,
)
from .complex_linalg import (
    CholeskyFactor,
    hermitian_cholesky,
    log_gauss_density,
    sample_gaussian,
    solve_psd,
)
from .dataset_io import (
    ChannelDataset,
    ChannelSample,
    import_csv,
    normalize_dataset,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .estimators import (
    Dictionary,
    Estimate,
    GmmCme,
    NoiseModel,
    dft_dictionary,
    gmm_cme_estimate,
    lmmse_estimate,
    ls_estimate,
    omp_genie,
    sample_covariance,
)
from .gmm import (
    EmConfig,
    GmmModel,
    fit_em,
    load_model,
    log_likelihood,
    receive_pdf,
    responsibilities,
    sample_gmm,
    save_model,
)
from .harness import (
    ExperimentConfig,
    SweepResult,
    emit_csv,
    normalized_mse,
    run_k_sweep,
    run_snr_sweep,
)

__version__ = "0.1.0"
