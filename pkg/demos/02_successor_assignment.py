"""
From link probabilities to ordered phrases
==========================================

A hand-made probability matrix over four words walks through the greedy
successor assignment, conflict resolution and path generation.
"""
import numpy as np

from maplink.inference import AssignmentTrace, assign_successors, generate_paths

words = ["SAINT", "PAUL", "RIVER", "MILL"]

# row i: where does word i's phrase continue? (self = phrase ends here)
P = np.array([
    [0.05, 0.80, 0.10, 0.05],  # SAINT -> PAUL
    [0.05, 0.70, 0.20, 0.05],  # PAUL ends
    [0.05, 0.60, 0.30, 0.05],  # RIVER also wants PAUL, but weaker
    [0.05, 0.05, 0.10, 0.80],  # MILL ends
])

trace = AssignmentTrace()
succ = assign_successors(P, trace=trace)
print("successors:", {words[i]: words[j] for i, j in enumerate(succ)})
print("sweeps %d, zeroed %d, cycles cut %d" % (trace.outer_iterations, trace.zeroed, trace.cycles_broken))

for path in generate_paths(succ):
    print(" ".join(words[w] for w in path))

# two words pointing at each other form a cycle; the weaker link is cut
cyc = np.array([[0.1, 0.9], [0.7, 0.3]])
print("raw:", assign_successors(cyc, break_cycles=False), "cut:", assign_successors(cyc))
