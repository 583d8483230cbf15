import numpy as np
from rest_framework import serializers

from core.loopsim import X0_MODES
from detection.attacks import CHANNELS, COVERT_PAIRS, KINDS, SHAPES
from harness.nodes import ADVERSARY_SIDES, SCHEMES
from harness.transport import TRANSPORTS

# Canales que cada esquema transmite y que un atacante puede tocar
SCHEME_CHANNELS = {
    'baseline': ('a_u', 'a_y'),
    'scheme_a': ('a_u', 'a_y', 'a_r_en'),
    'scheme_b': ('a_gamma', 'a_r0', 'a_beta'),
}
INPUT_CHANNELS = ('a_u', 'a_gamma', 'a_beta', 'a_r_en')
REFERENCE_SHAPES = ('zero', 'step', 'sine', 'white')


class MatrixField(serializers.Field):
    """
    Real matrix written as a row-major list of rows.

    Returns a float64 ``np.ndarray`` of shape (rows, cols); ``[]`` is the
    empty 0x0 matrix.
    """

    default_error_messages = {
        'invalid': 'Se esperaba una matriz como lista de filas numéricas.',
        'ragged': 'Todas las filas deben tener la misma longitud.',
        'non_finite': 'La matriz contiene valores no finitos.',
    }

    def to_internal_value(self, data):
        if not isinstance(data, list) or any(not isinstance(row, list) for row in data):
            self.fail('invalid')
        if not data:
            return np.zeros((0, 0))
        if len({len(row) for row in data}) > 1:
            self.fail('ragged')
        try:
            M = np.array(data, dtype=float)
        except (TypeError, ValueError):
            self.fail('invalid')
        if not np.all(np.isfinite(M)):
            self.fail('non_finite')
        return M.reshape(len(data), -1)

    def to_representation(self, value):
        return np.asarray(value, dtype=float).tolist()


class NoiseSerializer(serializers.Serializer):
    Sigma_w = MatrixField()
    Sigma_v = MatrixField()
    S = MatrixField(required=False)
    Pi0 = MatrixField(required=False)


class InitialStateSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=X0_MODES, default='zero')
    value = serializers.ListField(child=serializers.FloatField(), required=False)

    def validate(self, attrs):
        if attrs['mode'] == 'fixed' and 'value' not in attrs:
            raise serializers.ValidationError({'value': "x0 'fixed' requiere un valor."})
        return attrs


class PlantModelSerializer(serializers.Serializer):
    """(A, B, C, D) with mutually consistent shapes; D defaults to zeros."""

    A = MatrixField()
    B = MatrixField()
    C = MatrixField()
    D = MatrixField(required=False)

    def validate(self, attrs):
        A, B, C = attrs['A'], attrs['B'], attrs['C']
        n = A.shape[0]
        if A.shape != (n, n) or n == 0:
            raise serializers.ValidationError({'A': f"A debe ser cuadrada y no vacía, es {A.shape[0]}x{A.shape[1]}."})
        if B.shape[0] != n:
            raise serializers.ValidationError({'B': f"B tiene {B.shape[0]} filas y A es {n}x{n}."})
        if C.shape[1] != n:
            raise serializers.ValidationError({'C': f"C tiene {C.shape[1]} columnas y A es {n}x{n}."})
        p, m = B.shape[1], C.shape[0]
        if 'D' not in attrs:
            attrs['D'] = np.zeros((m, p))
        if attrs['D'].shape != (m, p):
            raise serializers.ValidationError(
                {'D': f"D es {attrs['D'].shape[0]}x{attrs['D'].shape[1]}, se esperaba {m}x{p} según C y B."})
        return attrs


class PlantSerializer(PlantModelSerializer):
    noise = NoiseSerializer()
    x0 = InitialStateSerializer(required=False)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        n, m = attrs['A'].shape[0], attrs['C'].shape[0]
        noise = attrs['noise']
        expected = {'Sigma_w': (n, n), 'Sigma_v': (m, m), 'S': (n, m), 'Pi0': (n, n)}
        for key, shape in expected.items():
            if key in noise and noise[key].shape != shape:
                raise serializers.ValidationError(
                    {'noise': f"{key} es {noise[key].shape[0]}x{noise[key].shape[1]}, "
                              f"se esperaba {shape[0]}x{shape[1]}."})
        x0 = attrs.get('x0')
        if x0 and 'value' in x0 and len(x0['value']) != n:
            raise serializers.ValidationError({'x0': f"x0 tiene longitud {len(x0['value'])}, se esperaba {n}."})
        return attrs


class ControllerSerializer(serializers.Serializer):
    """
    Mode-0 controller: explicit gains or LQR-style weights, plus the Youla
    parameter choice.
    """

    F0 = MatrixField(required=False)
    L0 = MatrixField(required=False)
    Qw = MatrixField(required=False)
    Rw = MatrixField(required=False)
    observer = serializers.ChoiceField(choices=('kalman', 'lqr'), default='kalman')
    Q = serializers.ChoiceField(choices=('zero', 'random'), default='zero')
    Q_order = serializers.IntegerField(min_value=1, default=2)


class GainBankSerializer(serializers.Serializer):
    kappa = serializers.IntegerField(min_value=1, required=False)
    dwell_min = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(min_value=0, required=False)
    perturbation_scale = serializers.FloatField(min_value=0.0, required=False)


class SignalSerializer(serializers.Serializer):
    shape = serializers.ChoiceField(choices=SHAPES, default='step')
    amplitude = serializers.ListField(child=serializers.FloatField(), required=False)
    frequency = serializers.FloatField(default=0.0)
    samples = MatrixField(required=False)

    def validate(self, attrs):
        if attrs['shape'] == 'samples' and 'samples' not in attrs:
            raise serializers.ValidationError({'samples': "La forma 'samples' requiere muestras."})
        if attrs['shape'] != 'samples' and 'amplitude' not in attrs:
            raise serializers.ValidationError({'amplitude': 'Se requiere una amplitud.'})
        return attrs


class AttackSerializer(serializers.Serializer):
    """
    One attack entry. ``start``/``end`` bound the active window; replays add
    the recording window ``record_start``/``record_length``.
    """

    kind = serializers.ChoiceField(choices=KINDS)
    channels = serializers.ListField(child=serializers.ChoiceField(choices=tuple(CHANNELS)), allow_empty=True)
    start = serializers.IntegerField(min_value=0, default=0)
    end = serializers.IntegerField(min_value=0, required=False, allow_null=True)
    signal = SignalSerializer(required=False)
    z0 = serializers.CharField(default='auto')
    amplitude = serializers.FloatField(default=1.0)
    phase = serializers.FloatField(default=0.0)
    match_state = serializers.BooleanField(default=False)
    record_start = serializers.IntegerField(min_value=0, required=False)
    record_length = serializers.IntegerField(min_value=1, required=False)
    knowledge = serializers.ChoiceField(choices=('nominal', 'omniscient'), default='nominal')

    def validate_z0(self, value):
        """
        Validates the invariant zero selector.

        Args:
            value (str): 'auto' or a complex literal such as '0.5' or '1.2+0.3j'.

        Returns:
            str | complex: 'auto' or the parsed zero.

        Raises:
            serializers.ValidationError: If the value is neither.
        """
        if value == 'auto':
            return value
        try:
            return complex(value.replace(' ', ''))
        except ValueError:
            raise serializers.ValidationError("z0 debe ser 'auto' o un número.")

    def validate(self, attrs):
        kind, channels = attrs['kind'], attrs['channels']

        # 1. Ventana activa
        if attrs.get('end') is not None and attrs['end'] < attrs['start']:
            raise serializers.ValidationError({'end': 'El fin del ataque es anterior a su inicio.'})

        # 2. Estructura de canales según el tipo
        if kind == 'covert':
            pairs = {tuple(sorted(p)) for p in COVERT_PAIRS}
            if tuple(sorted(channels)) not in pairs:
                raise serializers.ValidationError(
                    {'channels': 'Un ataque encubierto requiere ambos canales del par (a_u, a_y) o (a_gamma, a_r0).'})
        elif kind in ('additive', 'zero_dynamics') and len(channels) != 1:
            raise serializers.ValidationError({'channels': f"Un ataque {kind} actúa sobre un único canal."})
        elif kind == 'encoder_forgery' and channels != ['a_r_en']:
            raise serializers.ValidationError({'channels': 'La falsificación del codificador solo actúa sobre a_r_en.'})
        elif kind == 'none' and channels:
            raise serializers.ValidationError({'channels': "Un ataque 'none' no toca canales."})

        if kind == 'zero_dynamics' and channels[0] not in ('a_u', 'a_gamma'):
            raise serializers.ValidationError({'channels': 'El ataque de dinámica cero se inyecta en el actuador.'})

        # 3. Generadores requeridos
        needs_signal = kind in ('additive', 'covert') or \
            (kind == 'replay' and any(c in ('a_u', 'a_gamma') for c in channels))
        if needs_signal and 'signal' not in attrs:
            raise serializers.ValidationError({'signal': f"El ataque {kind} requiere una señal."})

        # 4. Repetición: la grabación termina antes de reproducir
        if kind == 'replay':
            if 'record_start' not in attrs or 'record_length' not in attrs:
                raise serializers.ValidationError(
                    {'record_start': 'La repetición requiere record_start y record_length.'})
            if attrs['start'] < attrs['record_start'] + attrs['record_length']:
                raise serializers.ValidationError(
                    {'start': 'La repetición debe empezar después de terminar la grabación.'})
            if not any(c not in ('a_u', 'a_gamma') for c in channels):
                raise serializers.ValidationError({'channels': 'La repetición debe sustituir al menos un canal.'})
        return attrs


class ReferenceSerializer(serializers.Serializer):
    shape = serializers.ChoiceField(choices=REFERENCE_SHAPES, default='zero')
    amplitude = serializers.ListField(child=serializers.FloatField(), required=False)
    frequency = serializers.FloatField(default=0.01)


class TransportSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=tuple(TRANSPORTS), default='inproc')
    host = serializers.CharField(default='127.0.0.1')
    port = serializers.IntegerField(min_value=0, max_value=65535, default=0)
    timeout = serializers.FloatField(min_value=0.0, required=False)
    adversary = serializers.ChoiceField(choices=ADVERSARY_SIDES, default='monitor')


class OutputSerializer(serializers.Serializer):
    dir = serializers.CharField(default='out')


class ScenarioSerializer(serializers.Serializer):
    """
    Schema of a scenario file.

    Validates every section and cross-checks the matrix dimensions against
    the plant. The JSON key ``lambda`` is exposed as ``lam``.
    """

    name = serializers.CharField(default='scenario')
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=0)
    horizon = serializers.IntegerField(min_value=1)
    scheme = serializers.ChoiceField(choices=SCHEMES, default='baseline')
    alpha = serializers.FloatField(min_value=0.0, max_value=1.0, required=False)
    lam = serializers.FloatField(required=False)
    plant = PlantSerializer()
    controller = ControllerSerializer(required=False)
    gain_bank = GainBankSerializer(required=False)
    reference = ReferenceSerializer(required=False)
    attacks = AttackSerializer(many=True, required=False)
    transport = TransportSerializer(required=False)
    output = OutputSerializer(required=False)

    def to_internal_value(self, data):
        if isinstance(data, dict) and 'lambda' in data:
            data = dict(data)
            data['lam'] = data.pop('lambda')
        return super().to_internal_value(data)

    def validate_alpha(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError('alpha debe estar en (0, 1).')
        return value

    def validate_lam(self, value):
        if value <= 0:
            raise serializers.ValidationError('lambda debe ser positivo.')
        return value

    def validate(self, attrs):
        """
        Cross-section checks.

        Raises:
            serializers.ValidationError: Keyed by the section, naming the
                matrices whose dimensions disagree.
        """
        plant = attrs['plant']
        n, p, m = plant['A'].shape[0], plant['B'].shape[1], plant['C'].shape[0]

        # 1. Horizonte
        if attrs['horizon'] <= 10 * n:
            raise serializers.ValidationError({'horizon': f"El horizonte debe superar 10·n = {10 * n} pasos."})

        # 2. Controlador
        controller = attrs.get('controller') or {}
        expected = {'F0': (p, n), 'L0': (n, m), 'Qw': (n, n), 'Rw': (p, p)}
        for key, shape in expected.items():
            if key in controller and controller[key].shape != shape:
                raise serializers.ValidationError(
                    {'controller': f"{key} es {controller[key].shape[0]}x{controller[key].shape[1]}, "
                                   f"se esperaba {shape[0]}x{shape[1]}."})

        # 3. Ataques: canales del esquema y dimensiones de las señales
        allowed = SCHEME_CHANNELS[attrs['scheme']]
        for i, attack in enumerate(attrs.get('attacks', [])):
            foreign = [c for c in attack['channels'] if c not in allowed]
            if foreign:
                raise serializers.ValidationError(
                    {'attacks': f"Ataque {i}: el esquema {attrs['scheme']} no transmite {foreign}."})
            if attack['start'] >= attrs['horizon']:
                raise serializers.ValidationError({'attacks': f"Ataque {i}: empieza después del horizonte."})
            signal = attack.get('signal')
            if signal is None or not attack['channels']:
                continue
            target = next((c for c in attack['channels'] if c in INPUT_CHANNELS), attack['channels'][0])
            dim = p if target in INPUT_CHANNELS else m
            width = len(signal['amplitude']) if 'amplitude' in signal else signal['samples'].shape[1]
            if width != dim:
                raise serializers.ValidationError(
                    {'attacks': f"Ataque {i}: la señal de {target} tiene dimensión {width}, se esperaba {dim}."})

        # 4. Referencia
        reference = attrs.get('reference')
        if reference and 'amplitude' in reference and len(reference['amplitude']) != p:
            raise serializers.ValidationError(
                {'reference': f"La referencia tiene dimensión {len(reference['amplitude'])}, se esperaba {p}."})
        return attrs
