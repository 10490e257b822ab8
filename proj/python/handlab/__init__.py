# Copyright 2026-present the handlab authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Hand segmentation, patch-dictionary label restoration and pose regression."""

from handlab._core import (
    NUM_JOINTS,
    NUM_LABELS,
    ConfigError,
    ContractError,
    DependencyError,
    DivergenceError,
    EmptyDictionaryError,
    FormatError,
    GenerationError,
    HandlabError,
    IoError,
    Neighbor,
    PatchDictionary,
    Pipeline,
    StageOutcome,
    __version__,
    generate_sample,
    hamming_distance,
    pose_error,
    read_sample,
    restore,
    seg_accuracy,
    stage_names,
)

__all__ = [
    "NUM_JOINTS",
    "NUM_LABELS",
    "ConfigError",
    "ContractError",
    "DependencyError",
    "DivergenceError",
    "EmptyDictionaryError",
    "FormatError",
    "GenerationError",
    "HandlabError",
    "IoError",
    "Neighbor",
    "PatchDictionary",
    "Pipeline",
    "StageOutcome",
    "__version__",
    "generate_sample",
    "hamming_distance",
    "pose_error",
    "read_sample",
    "restore",
    "seg_accuracy",
    "stage_names",
]
