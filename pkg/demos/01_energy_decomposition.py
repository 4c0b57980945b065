# %% [markdown]
# Energy decomposition from four measured means
#
# Lens/pinhole x dark/no-dark matched correlation means go in; PRNU, dark
# current (FPN) and lens (LOS) energies come out, together with their
# signal-to-power ratios.

# %%
from spnlens.decomposition import ConditionMeans, report_text, snp_table, solve

means = ConditionMeans(
    lens_with_dark=0.0865,
    pinhole_with_dark=0.0666,
    lens_no_dark=0.0844,
    pinhole_no_dark=0.0644,
)
d = solve(means)
table = snp_table(d)
print(report_text(d, table))

# %% the two lens estimates should agree
print(f"los {d.los:.4f} vs los_check {d.los_check:.4f} -> consistent={d.consistent}")

# %% share of each identifier in the extended fingerprint
for name, share in table.shares.items():
    print(f"{name:5s} {100 * share:5.1f}%")

# %% everything scales linearly; halving the means halves every energy
half = solve(ConditionMeans(*(v / 2 for v in means.to_dict().values())))
print(half.prnu / d.prnu, half.los / d.los, half.fpn / d.fpn)
