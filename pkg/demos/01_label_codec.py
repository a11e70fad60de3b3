"""Walk through the grid-label codec: matrices, textual records, student IDs.

A filled template is a 10x10 binary matrix: rows are digit values, columns
are ID positions. The textual record is the compact lossless form used in
dataset manifests.
"""

import numpy as np

from markgrid import GridLabel, from_text, is_cfmt, to_student_id, to_text

# A correctly filled sheet: exactly one mark per column.
label = GridLabel.from_id("0036482915")
print("textual record:", to_text(label))
print("correctly filled:", is_cfmt(label))
print("decoded ID:", to_student_id(label))

# Mess it up: an extra mark in column 2 and a cleared column 7.
cells = label.cells.copy()
cells[9, 2] = 1
cells[:, 7] = 0
broken = GridLabel(cells)
print("\nbroken record:", to_text(broken))
print("correctly filled:", is_cfmt(broken))

# The record is lossless: parse it back and compare.
assert from_text(to_text(broken)) == broken

# Round-trip a batch of arbitrary mark patterns.
rng = np.random.default_rng(0)
for _ in range(1000):
    lab = GridLabel(rng.integers(0, 2, size=(10, 10)))
    assert from_text(to_text(lab)) == lab
print("\n1000 random labels round-tripped exactly")
