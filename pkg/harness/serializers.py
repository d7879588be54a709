import math

from rest_framework import serializers

from accel.schemes import DAMPING_MODES
from harness.config import ACCEL_METHODS, METHODS, ORACLES, ExperimentConfig, parse_data_spec
from MSAccel.exceptions import ConfigError


class FiniteFloatField(serializers.FloatField):
    """Float that renders nan and inf as null so summaries stay strict JSON"""

    def to_representation(self, value):
        if value is None:
            return None
        value = float(value)
        return value if math.isfinite(value) else None


class ExperimentConfigSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=METHODS)
    oracle = serializers.ChoiceField(choices=ORACLES, required=False, allow_null=True)
    data = serializers.CharField()
    alpha = serializers.FloatField(required=False, allow_null=True)
    sigma = serializers.FloatField(required=False, allow_null=True)
    lambda0 = serializers.FloatField(required=False, allow_null=True)
    eta = serializers.FloatField(required=False, allow_null=True)
    M = serializers.FloatField(required=False, allow_null=True)
    H = serializers.FloatField(required=False, allow_null=True)
    h_scale = serializers.FloatField(required=False, allow_null=True)
    rho = serializers.FloatField(required=False, allow_null=True)
    damping = serializers.ChoiceField(choices=DAMPING_MODES, default='on')
    lazy = serializers.ChoiceField(choices=('on', 'off'), required=False, allow_null=True)
    budget_calls = serializers.IntegerField(required=False, allow_null=True, min_value=1)
    max_seconds = serializers.FloatField(required=False, allow_null=True)
    target_gap = serializers.FloatField(required=False, allow_null=True, min_value=0.0)
    seed = serializers.IntegerField(default=0, min_value=0)
    out = serializers.CharField(required=False, allow_null=True)
    audit = serializers.BooleanField(default=False)

    def validate_alpha(self, value):
        if value is not None and not value > 1.0:
            raise serializers.ValidationError('alpha must exceed 1')
        return value

    def validate_rho(self, value):
        if value is not None and not value > 1.0:
            raise serializers.ValidationError('rho must exceed 1')
        return value

    def validate_sigma(self, value):
        if value is not None and not 0.0 < value < 1.0:
            raise serializers.ValidationError('sigma must lie strictly between 0 and 1')
        return value

    def validate(self, attrs):
        for name in ('lambda0', 'eta', 'M', 'H', 'h_scale', 'max_seconds'):
            value = attrs.get(name)
            if value is not None and not (value > 0 and math.isfinite(value)):
                raise serializers.ValidationError({name: 'must be positive and finite'})

        method, oracle = attrs['method'], attrs.get('oracle')
        if method in ACCEL_METHODS and oracle is None:
            raise serializers.ValidationError({'oracle': f'{method} needs an oracle'})
        if method not in ACCEL_METHODS and oracle is not None:
            raise serializers.ValidationError({'oracle': f'{method} does not take an oracle'})
        if oracle == 'GD' and attrs.get('eta') is None:
            raise serializers.ValidationError({'eta': 'the gradient-step oracle needs a step size'})
        if attrs.get('audit') and method not in ACCEL_METHODS:
            raise serializers.ValidationError({'audit': 'only OPTMS and MS runs carry the potential terms'})
        if method == 'MS' and attrs.get('lazy') == 'on':
            raise serializers.ValidationError({'lazy': 'bisection classifies each probe by the full aMSN search, lazy must be off'})
        if method == 'SONG' and attrs.get('M') is not None and attrs.get('H') is None:
            raise serializers.ValidationError({'H': 'SONG needs H, not M'})
        if all(attrs.get(name) is None for name in ('budget_calls', 'max_seconds', 'target_gap')):
            raise serializers.ValidationError('at least one of budget_calls, max_seconds, target_gap is required')

        try:
            attrs['data'] = parse_data_spec(attrs['data'], seed=attrs.get('seed', 0))
        except ConfigError as exc:
            raise serializers.ValidationError({'data': str(exc)})
        return attrs

    def create(self, validated_data):
        # lazy aMSN pairs with the optimal scheme only
        lazy = validated_data.get('lazy')
        validated_data['lazy'] = validated_data['method'] == 'OPTMS' if lazy is None else lazy == 'on'
        return ExperimentConfig(**validated_data)


class OracleCallSerializer(serializers.Serializer):
    t = serializers.IntegerField()
    kind = serializers.CharField()
    lambda_query = FiniteFloatField(allow_null=True)
    lam = FiniteFloatField()
    ms_residual = FiniteFloatField(allow_null=True)
    step_norm = FiniteFloatField()
    floor_hit = serializers.BooleanField()
    stationary = serializers.BooleanField()
    hessian_evals = serializers.IntegerField()
    linear_solves = serializers.IntegerField()
    hvps = serializers.IntegerField()
    gradient_evals = serializers.IntegerField()


class RunSummarySerializer(serializers.Serializer):
    schema = serializers.CharField()
    method = serializers.CharField()
    oracle = serializers.CharField(allow_null=True)
    data = serializers.CharField()
    config = serializers.DictField()
    params = serializers.DictField()
    fingerprint = serializers.CharField()
    sigma = FiniteFloatField(allow_null=True)
    alpha = FiniteFloatField(allow_null=True)
    H = FiniteFloatField(allow_null=True)
    status = serializers.CharField()
    error = serializers.CharField(allow_null=True)
    iterations = serializers.IntegerField()
    oracle_calls = serializers.IntegerField()
    f_star = FiniteFloatField(allow_null=True)
    final_f = FiniteFloatField(allow_null=True)
    final_gap = FiniteFloatField(allow_null=True)
    best_gap = FiniteFloatField(allow_null=True)
    counters = serializers.DictField(child=serializers.IntegerField())
    wall_ms = FiniteFloatField()
    calls = OracleCallSerializer(many=True)
    audit = serializers.DictField(allow_null=True)
