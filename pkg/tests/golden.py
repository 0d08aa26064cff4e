"""Rows copied from the published dating tables: covariate -> (mean, sd)."""

# CRL (mm) from FA (days), IVF robust fit
IVF_CRL = {26: (1.572894, 3.047959), 44: (17.03163, 1.393582),
           56: (32.82732, 2.308587), 85: (89.13202, 6.394012)}
# FA (days) from CRL (mm), IVF heteroskedastic fit
IVF_FA = {1: (23.92126, 2.420171), 25: (50.4085, 1.830088),
          50: (66.07021, 2.042745), 84: (83.25691, 2.545124)}
# CRL (mm) from FA (days), spontaneous heteroskedastic fit
SPONT_CRL = {26: (1.160552, 0.8733835), 44: (16.56196, 4.804586),
             56: (32.1681, 5.582057), 85: (87.51494, 5.310144)}
# FA (days) from CRL (mm), spontaneous heteroskedastic fit
SPONT_FA = {1: (25.29526, 5.330148), 25: (51.69256, 3.752622),
            50: (66.56052, 3.085059), 84: (82.42634, 2.623390)}

# chart name -> (table rows, mean tolerance, sd tolerance)
GOLDEN = {
    "eq1_ivf_crl": (IVF_CRL, 0.02, 0.05),
    "eq4_ivf_fa": (IVF_FA, 0.01, 0.01),
    "eq2_spont_crl": (SPONT_CRL, 0.15, 0.05),
    "eq3_spont_fa": (SPONT_FA, 0.01, 0.01),
}
