#pragma once

// Umbrella header for the faceforge library.

#include "faceforge/codec/landmark_image.hpp"
#include "faceforge/core/ops.hpp"
#include "faceforge/data/manifest.hpp"
#include "faceforge/data/pairs.hpp"
#include "faceforge/data/synth.hpp"
#include "faceforge/identity/embedder.hpp"
#include "faceforge/losses/losses.hpp"
#include "faceforge/metrics/evaluate.hpp"
#include "faceforge/metrics/metrics.hpp"
#include "faceforge/nn/patchgan.hpp"
#include "faceforge/nn/unet.hpp"
#include "faceforge/train/trainer.hpp"
