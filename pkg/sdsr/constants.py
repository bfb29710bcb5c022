# Copyright 2026 British Broadcasting Corporation
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

# THESE CONSTANTS ARE NOT PART OF THIS LIBRARY'S PUBLIC INTERFACE
# The same values are made available through the config dataclasses, such as
#
# WaitKConfig().alpha
#
# So use those instead.

MAX_NANOSEC = 1000000000

# transducer
BLANK_ID = 0
DEFAULT_LEFT_CONTEXT = 64
DEFAULT_RIGHT_CONTEXT = 0

# wait-k decoder
DEFAULT_WAIT_KS = (1, 10, 20)
DEFAULT_TEACHER_OFFSET = 10
DEFAULT_ALPHA = 0.2

# quantizer
KMEANS_MAX_ITER = 100
KMEANS_TOLERANCE = 1e-9

# numerics
LOG_FLOOR = 1e-30
FINITE_DIFF_STEP = 1e-5

# checkpoint container
CHECKPOINT_MAGIC = b"SDSR"
CHECKPOINT_VERSION = 1
