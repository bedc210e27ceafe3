#pragma once

#include <toothbox/assignment.hpp>
#include <toothbox/detections.hpp>
#include <toothbox/division.hpp>
#include <toothbox/error.hpp>
#include <toothbox/evaluation.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/phantom.hpp>
#include <toothbox/pipeline.hpp>
#include <toothbox/reconstruction.hpp>
#include <toothbox/slab.hpp>
#include <toothbox/volume.hpp>
