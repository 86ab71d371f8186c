#pragma once

#include "grains/analysis.hpp"
#include "grains/applications.hpp"
#include "grains/error.hpp"
#include "grains/generate.hpp"
#include "grains/geometry.hpp"
#include "grains/hierarchy.hpp"
#include "grains/nn.hpp"
#include "grains/relpos.hpp"
#include "grains/rvnn.hpp"
#include "grains/scene_model.hpp"
#include "grains/service.hpp"
#include "grains/synth.hpp"
#include "grains/synthesis.hpp"
#include "grains/train.hpp"
#include "grains/tree.hpp"
