"""Unsupervised discovery of mobile objects in LiDAR sequences.

The package turns raw LiDAR sweeps, ego poses, camera calibrations, and
precomputed image feature maps into pseudo-bounding boxes and pseudo-class
labels for mobile objects (vehicles, pedestrians, ...), and ships an
evaluation harness for scoring any detection file against ground truth.

Subpackage layout:

- ``dataset``     scene directory layout, in-memory data model, transforms
- ``ground``      RANSAC ground-plane fitting and non-ground extraction
- ``density``     exact HDBSCAN clustering
- ``clustering``  temporal aggregation and object proposals
- ``motion``      SE(2) ICP motion estimates, static/dynamic split
- ``appearance``  camera feature sampling and proposal embeddings
- ``discovery``   K-Means over embeddings, mobile-cluster selection,
                  pseudo-classes and prototype matching
- ``boxes``       minimum-area box fitting and label assembly
- ``evaluation``  center-distance AP, TP errors, NDS
- ``pipeline``    end-to-end orchestration
- ``synthetic``   synthetic benchmark scene generation
- ``cli``         command line entry points
"""

__version__ = "0.1.0"
