"""
Attack paths and who can walk them
==================================

Enumerate minimal cut sets for each goal tree, prune them to what a UI-bound
abuser can do, and summarize the patient-safety hazards they reach.
"""

from medjack import enumerate_paths, filter_paths, hazard_summary, map_inventory
from medjack.scene import bundled_scene
from medjack.threat_tree import FULL_PROFILE, UI_BOUND_PROFILE, load_bundled_trees

trees = load_bundled_trees()
for goal, tree in trees.items():
    paths = enumerate_paths(tree)
    ui = filter_paths(paths, UI_BOUND_PROFILE, tree)
    print(f"{goal.value:<16} {len(paths)} paths, {len(ui)} open to a UI-bound abuser")
    for p in ui:
        print("   ", " + ".join(tree.leaf(x).label for x in p.sorted_leaves))

# %%
# Hazards reachable with full capability, grouped by onset and severity.
report = hazard_summary(p for t in trees.values() for p in filter_paths(enumerate_paths(t), FULL_PROFILE, t))
for g in report.groups:
    print(f"{g.onset.value:<8} {g.severity.value:<13} {g.path_count} paths")
print("worst:", report.worst_severity.value)

# %%
# Which leaves apply to which device in the scene.
for d in map_inventory(bundled_scene().inventory(), trees.values()).devices:
    print(f"{d.device_label:<28} {len(d.leaves):2d} leaves  {d.flag or ''}")
