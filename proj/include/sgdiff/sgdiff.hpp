#pragma once

// scene-graph-conditioned diffusion for labeled-bounding-box scenes

#include "sgdiff/checkpoint.hpp"
#include "sgdiff/common.hpp"
#include "sgdiff/config.hpp"
#include "sgdiff/data.hpp"
#include "sgdiff/ddpm.hpp"
#include "sgdiff/denoiser.hpp"
#include "sgdiff/graph.hpp"
#include "sgdiff/jsonio.hpp"
#include "sgdiff/objectives.hpp"
#include "sgdiff/relations.hpp"
#include "sgdiff/render.hpp"
#include "sgdiff/rng.hpp"
#include "sgdiff/scene.hpp"
#include "sgdiff/tensor.hpp"
