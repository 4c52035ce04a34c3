import numpy as np
import pytest

from nucfuse import LabeledScene


def make_scene(instance_rows, class_rows=None) -> LabeledScene:
    """Build a LabeledScene from nested lists; classes default to 1 wherever
    an instance id is set."""
    instance = np.asarray(instance_rows, dtype=np.int32)
    if class_rows is None:
        classes = (instance != 0).astype(np.uint8)
    else:
        classes = np.asarray(class_rows, dtype=np.uint8)
    return LabeledScene(instance, classes)


@pytest.fixture
def box_scene():
    """Two disjoint rectangular cells, classes 2 and 5, inside 12x12."""
    instance = np.zeros((12, 12), dtype=np.int32)
    classes = np.zeros((12, 12), dtype=np.uint8)
    instance[1:4, 1:5] = 7
    classes[1:4, 1:5] = 2
    instance[6:10, 6:11] = 3
    classes[6:10, 6:11] = 5
    return LabeledScene(instance, classes)
