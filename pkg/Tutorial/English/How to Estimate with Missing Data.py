import os

# (Optional) Propensity clamp and worker threads.
os.environ['AIPW_GMM_CLAMP_LO'] = '0.01'
os.environ['AIPW_GMM_THREADS'] = '2'

# Make sure to set environment variables before the first estimate call.
import aipw_gmm

dataset = aipw_gmm.load_csv(
    r"<PATH_TO_CSV>",  # Replace with your data file
    {
        'outcome': '<OUTCOME_COLUMN>',
        'treatment': '<TREATMENT_COLUMN>',
        'instruments': ['<INSTRUMENT_COLUMN>'],
        'covariates': ['<COVARIATE_COLUMN>'],
        'treatment_type': 'binary',  # 'binary', 'discrete' (with 'treatment_values') or 'continuous'
        'missing_tokens': ['', 'NA', '.'],
    },
)

# Check which assumption the data support before estimating.
diagnosis = aipw_gmm.diagnose(dataset)
print(diagnosis.recommendation)

outcome = aipw_gmm.estimate(
    dataset,
    assumption='SMAR',  # 'MAR' or 'SMAR'
    estimator='AIPW',  # 'CC', 'IPW' or 'AIPW'
    sieve=[aipw_gmm.SieveSpec(degree=d) for d in (1, 2, 3)],  # Candidates, chosen by cross-validation
    d_support=(0, 1),  # Integrate the imputations over the binary treatment
    pattern_mode='strict',  # Use 'general' when a missingness pattern is empty
)

for name, b, se in zip(outcome.result.names, outcome.result.beta_hat, outcome.result.std_errors):
    print(f"{name}: {b:.4f} ({se:.4f})")
