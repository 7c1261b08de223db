# src package: the localization pipeline (geodesy, calibration, simulation,
# windowing, networks, baselines, self-training, evaluation)
