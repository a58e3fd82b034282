#pragma once

#include "dprobe/augmentation.hpp"
#include "dprobe/corpus_io.hpp"
#include "dprobe/coverage.hpp"
#include "dprobe/dataset.hpp"
#include "dprobe/error.hpp"
#include "dprobe/generator.hpp"
#include "dprobe/image_io.hpp"
#include "dprobe/manifest.hpp"
#include "dprobe/model_zoo.hpp"
#include "dprobe/network.hpp"
#include "dprobe/parallel.hpp"
#include "dprobe/rng.hpp"
#include "dprobe/sweep.hpp"
#include "dprobe/synthetic.hpp"
#include "dprobe/tensor.hpp"
#include "dprobe/train.hpp"
#include "dprobe/transforms.hpp"
#include "dprobe/weights_io.hpp"
