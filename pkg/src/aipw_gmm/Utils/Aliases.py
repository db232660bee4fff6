assumption_map = {
    # Missing at random
    "mar": "MAR",
    "missing-at-random": "MAR",
    "missing_at_random": "MAR",

    # Sequential missing at random
    "smar": "SMAR",
    "sequential": "SMAR",
    "sequential-mar": "SMAR",
    "sequential_mar": "SMAR",
}

estimator_map = {
    "cc": "CC",
    "complete-case": "CC",
    "complete_case": "CC",
    "ipw": "IPW",
    "aipw": "AIPW",
    "dr": "AIPW",
    "doubly-robust": "AIPW",
    "aipw-general": "AIPW_GENERAL",
    "aipw_general": "AIPW_GENERAL",
}

misspecification_map = {
    "none": "none",
    "y": "wrong_y_imputations",
    "wrong-y": "wrong_y_imputations",
    "wrong_y_imputations": "wrong_y_imputations",
    "d": "wrong_d_imputation",
    "wrong-d": "wrong_d_imputation",
    "wrong_d_imputation": "wrong_d_imputation",
    "wrong_d_imputations": "wrong_d_imputation",
    "py": "wrong_py_omits_D",
    "wrong-py": "wrong_py_omits_D",
    "wrong_py_omits_d": "wrong_py_omits_D",
}


def normalize_alias(table: dict, value):
    if not isinstance(value, str):
        return value
    return table.get(value.lower().strip(), value)
