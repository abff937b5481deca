#pragma once

#include "nimblereg/decimate.hpp"
#include "nimblereg/error.hpp"
#include "nimblereg/geometry.hpp"
#include "nimblereg/io.hpp"
#include "nimblereg/kdtree.hpp"
#include "nimblereg/losses.hpp"
#include "nimblereg/metrics.hpp"
#include "nimblereg/model.hpp"
#include "nimblereg/pipeline.hpp"
#include "nimblereg/prealign.hpp"
#include "nimblereg/svf.hpp"
#include "nimblereg/synth.hpp"
#include "nimblereg/training.hpp"
#include "nimblereg/transform.hpp"
#include "nimblereg/types.hpp"
