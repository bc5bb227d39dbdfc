"""
Model specifications and presets.

A ModelSpec is a flat layer list plus input shape and class count. Shapes are
chained statically so a broken spec fails before any parameter is allocated.
"""
from dataclasses import dataclass, field

from src.shared.exceptions import InvalidSpec

LAYER_KINDS = ('conv', 'relu', 'maxpool', 'flatten', 'affine', 'resblock')


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {'kind': self.kind, **self.params}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        return cls(kind=data.pop('kind'), params=data)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple
    layers: tuple
    class_count: int
    block_ends: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'input_shape', tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, 'layers', tuple(self.layers))
        object.__setattr__(self, 'block_ends', tuple(self.block_ends))

    def layer_shapes(self):
        """
        Output shape of every layer, in order. Raises InvalidSpec naming the
        first layer whose input does not fit.
        """
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidSpec(f"Input shape must be (C, H, W), got {self.input_shape}")
        kinds = [layer.kind for layer in self.layers]
        if kinds.count('flatten') != 1:
            raise InvalidSpec(f"Spec must contain exactly one flatten layer, found {kinds.count('flatten')}")

        shape = self.input_shape
        shapes = []
        for index, layer in enumerate(self.layers):
            shape = _infer_output(layer, shape, index)
            shapes.append(shape)
        if shape != (self.class_count,):
            raise InvalidSpec(
                f"Final layer yields {shape}, expected ({self.class_count},)",
                layer_index=len(self.layers) - 1,
            )
        return shapes

    def feature_shape(self, split_index):
        """Shape of the activation crossing the boundary before layer split_index"""
        if split_index == 0:
            return self.input_shape
        return self.layer_shapes()[split_index - 1]

    @property
    def flatten_index(self):
        return [layer.kind for layer in self.layers].index('flatten')

    @property
    def valid_split_indices(self):
        shapes = self.layer_shapes()
        return [
            position for position in range(1, self.flatten_index + 1)
            if len(shapes[position - 1]) == 3
        ]

    def to_dict(self):
        return {
            'name': self.name,
            'input_shape': list(self.input_shape),
            'layers': [layer.to_dict() for layer in self.layers],
            'class_count': self.class_count,
            'block_ends': list(self.block_ends),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                name=data['name'],
                input_shape=tuple(data['input_shape']),
                layers=tuple(LayerSpec.from_dict(layer) for layer in data['layers']),
                class_count=int(data['class_count']),
                block_ends=tuple(data.get('block_ends', ())),
            )
        except (KeyError, TypeError) as e:
            raise InvalidSpec(f"Malformed model spec: {e}")


def _spatial_out(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    return span // stride + 1 if span >= 0 else 0


def _infer_output(layer, shape, index):
    params = layer.params
    if layer.kind not in LAYER_KINDS:
        raise InvalidSpec(f"Unknown layer kind '{layer.kind}'", layer_index=index)

    if layer.kind in ('conv', 'maxpool', 'resblock') and len(shape) != 3:
        raise InvalidSpec(f"{layer.kind} needs a (C, H, W) input, got {shape}", layer_index=index)

    if layer.kind == 'conv':
        c, h, w = shape
        if params.get('in_channels') != c:
            raise InvalidSpec(
                f"conv expects {params.get('in_channels')} input channels, receives {c}",
                layer_index=index,
            )
        kernel, stride, padding = params.get('kernel', 3), params.get('stride', 1), params.get('padding', 0)
        out_h, out_w = (_spatial_out(v, kernel, stride, padding) for v in (h, w))
        if out_h < 1 or out_w < 1:
            raise InvalidSpec(f"conv output would be empty for input {shape}", layer_index=index)
        return (params['out_channels'], out_h, out_w)

    if layer.kind == 'resblock':
        if params.get('channels') != shape[0]:
            raise InvalidSpec(
                f"resblock declared for {params.get('channels')} channels, receives {shape[0]}",
                layer_index=index,
            )
        return shape

    if layer.kind == 'maxpool':
        c, h, w = shape
        kernel, stride = params.get('kernel', 2), params.get('stride', 2)
        if h < kernel or w < kernel:
            raise InvalidSpec(f"maxpool {kernel}x{kernel} does not fit {h}x{w}", layer_index=index)
        return (c, _spatial_out(h, kernel, stride, 0), _spatial_out(w, kernel, stride, 0))

    if layer.kind == 'relu':
        return shape

    if layer.kind == 'flatten':
        size = 1
        for v in shape:
            size *= v
        return (size,)

    # affine
    if len(shape) != 1:
        raise InvalidSpec(f"affine needs a flat input, got {shape}", layer_index=index)
    if params.get('in_features') != shape[0]:
        raise InvalidSpec(
            f"affine expects {params.get('in_features')} features, receives {shape[0]}",
            layer_index=index,
        )
    return (params['out_features'],)


# Layer constructors

def conv(in_channels, out_channels, kernel=3, stride=1, padding=1):
    return LayerSpec('conv', {
        'in_channels': in_channels, 'out_channels': out_channels,
        'kernel': kernel, 'stride': stride, 'padding': padding,
    })


def relu():
    return LayerSpec('relu')


def maxpool(kernel=2, stride=2):
    return LayerSpec('maxpool', {'kernel': kernel, 'stride': stride})


def flatten():
    return LayerSpec('flatten')


def affine(in_features, out_features):
    return LayerSpec('affine', {'in_features': in_features, 'out_features': out_features})


def resblock(channels):
    return LayerSpec('resblock', {'channels': channels})


# Presets

DEFAULT_CHANNELS = (16, 32, 64, 64)


def tiny_vgg(input_size=16, in_channels=3, class_count=10, channels=DEFAULT_CHANNELS):
    """Plain conv-relu-pool blocks followed by a linear head"""
    layers, block_ends = [], []
    previous = in_channels
    for width in channels:
        layers += [conv(previous, width), relu(), maxpool()]
        block_ends.append(len(layers))
        previous = width
    side = input_size // 2 ** len(channels)
    layers += [flatten(), affine(previous * side * side, class_count)]
    return ModelSpec(
        name='tinyvgg',
        input_shape=(in_channels, input_size, input_size),
        layers=tuple(layers),
        class_count=class_count,
        block_ends=tuple(block_ends),
    )


def tiny_res(input_size=16, in_channels=3, class_count=10, channels=DEFAULT_CHANNELS):
    """Blocks of conv-relu, a residual unit with identity skip, then pooling"""
    layers, block_ends = [], []
    previous = in_channels
    for width in channels:
        layers += [conv(previous, width), relu(), resblock(width), maxpool()]
        block_ends.append(len(layers))
        previous = width
    side = input_size // 2 ** len(channels)
    layers += [flatten(), affine(previous * side * side, class_count)]
    return ModelSpec(
        name='tinyres',
        input_shape=(in_channels, input_size, input_size),
        layers=tuple(layers),
        class_count=class_count,
        block_ends=tuple(block_ends),
    )


PRESETS = {
    'tinyvgg': tiny_vgg,
    'tinyres': tiny_res,
}

PRESET_INPUT_SIZES = (16, 32)


def get_preset(name, input_size=16, class_count=10, in_channels=3):
    key = name.lower().replace('-', '').replace('_', '')
    if key not in PRESETS:
        raise InvalidSpec(f"Unknown preset '{name}'. Available: {', '.join(sorted(PRESETS))}")
    if input_size not in PRESET_INPUT_SIZES:
        raise InvalidSpec(f"Presets come in {PRESET_INPUT_SIZES} pixel variants, got {input_size}")
    return PRESETS[key](input_size=input_size, in_channels=in_channels, class_count=class_count)


def split_after_block(spec, block):
    """Layer position of the boundary after the given 1-based block"""
    if not 1 <= block <= len(spec.block_ends):
        raise InvalidSpec(f"{spec.name} has {len(spec.block_ends)} blocks, asked for block {block}")
    return spec.block_ends[block - 1]
