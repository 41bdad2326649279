"""Run every attack drill and print the verdicts.

Each drill plays a named adversary against the system and reports
VULNERABLE or DEFENDED with the numbers behind the call. The linkage
drill runs three ways to show the point of the private mode: plain
download leaks identities, the private mode with rate limiting holds,
and switching the rate limiter off hands the attacker a probe budget
that breaks it again.

    python3 demos/attack_gallery.py [seed]
"""

import sys

from cotrace.harness import (
    attack_foreign_upload,
    attack_linkage,
    attack_rebroadcast,
    attack_self_report,
)


def show(title: str, outcome, keys: list[str]) -> None:
    print(f"\n== {title}: {outcome.verdict} ==")
    print(f"  successes = {outcome.successes}/{outcome.trials}")
    for key in keys:
        if key in outcome.details:
            print(f"  {key} = {outcome.details[key]}")


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7

    print("attack drills, seed", seed)

    out = attack_linkage(mode="direct", seed=seed, population=200)
    show("linkage, plain download", out,
         ["population", "identified", "note"])

    out = attack_linkage(mode="psi", seed=seed, population=1000)
    show("linkage, private mode with rate limit", out,
         ["population", "groups_queried", "rate_limited_at_query",
          "undersized_rejected", "positive_groups",
          "best_identification_probability", "probability_bound"])

    out = attack_linkage(mode="psi", seed=seed, population=8, rate_limited=False)
    show("linkage, private mode, rate limit off", out,
         ["population", "identified", "note"])

    out = attack_rebroadcast(seed=seed, trials=30)
    show("rebroadcast a heard number later", out,
         ["same_interval_notified", "note"])

    out = attack_foreign_upload(seed=seed, trials=10)
    show("upload numbers you only heard", out,
         ["raw_upload_rejections", "fake_key_notifications", "control_notified"])

    out = attack_self_report(seed=seed, forged_attempts=500)
    show("claim contact you never had", out,
         ["forged_attempts", "forged_accepted", "control_orders"])


if __name__ == "__main__":
    main()
